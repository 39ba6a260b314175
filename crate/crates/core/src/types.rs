//! Logits, labels and the elementary operations on them.

use crate::error::{Error, Result};
use crate::kernel;

/// `N x C` matrix of raw pre-softmax outputs, row-major, all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix {
    rows: usize,
    classes: usize,
    values: Vec<f64>,
}

impl LogitMatrix {
    pub fn new(rows: usize, classes: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 {
            return Err(Error::param("logit matrix needs at least one row"));
        }
        if classes < 2 {
            return Err(Error::param(format!(
                "logit matrix needs at least two classes, got {classes}"
            )));
        }
        if values.len() != rows * classes {
            return Err(Error::Dimension {
                what: "logit values",
                expected: rows * classes,
                found: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Degenerate {
                row: pos / classes,
                reason: format!("non-finite logit in column {}", pos % classes),
            });
        }
        Ok(Self {
            rows,
            classes,
            values,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let classes = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * classes);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != classes {
                return Err(Error::Dimension {
                    what: if i == 0 { "row length" } else { "ragged row length" },
                    expected: classes,
                    found: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Self::new(rows.len(), classes, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.classes..(i + 1) * self.classes]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.classes)
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.classes);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::param(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            values.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.classes, values)
    }
}

/// Ground-truth labels, 0-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector(Vec<usize>);

impl LabelVector {
    pub fn new(labels: Vec<usize>, classes: usize) -> Result<Self> {
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
            return Err(Error::param(format!(
                "label {y} at sample {i} out of range for {classes} classes"
            )));
        }
        Ok(Self(labels))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self(indices.iter().map(|&i| self.0[i]).collect())
    }
}

/// Row-wise argmax of a logit matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionVector(Vec<usize>);

impl PredictionVector {
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// 0/1 losses: 1 marks a misclassified sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LossVector(Vec<u8>);

impl LossVector {
    pub fn from_errors(errors: impl IntoIterator<Item = bool>) -> Self {
        Self(errors.into_iter().map(u8::from).collect())
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn error_count(&self) -> usize {
        self.0.iter().map(|&l| l as usize).sum()
    }

    /// Empirical risk at full coverage.
    pub fn risk(&self) -> f64 {
        self.error_count() as f64 / self.0.len() as f64
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self(indices.iter().map(|&i| self.0[i]).collect())
    }
}

/// One confidence score per sample; only the induced order matters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceVector(Vec<f64>);

impl ConfidenceVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Degenerate {
                row: i,
                reason: "non-finite confidence score".into(),
            });
        }
        Ok(Self(scores))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self(indices.iter().map(|&i| self.0[i]).collect())
    }
}

/// A logit matrix paired with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub logits: LogitMatrix,
    pub labels: LabelVector,
}

impl Dataset {
    pub fn new(logits: LogitMatrix, labels: LabelVector) -> Result<Self> {
        if labels.len() != logits.rows() {
            return Err(Error::Dimension {
                what: "label count",
                expected: logits.rows(),
                found: labels.len(),
            });
        }
        if let Some(&y) = labels.as_slice().iter().find(|&&y| y >= logits.classes()) {
            return Err(Error::param(format!(
                "label {y} out of range for {} classes",
                logits.classes()
            )));
        }
        Ok(Self { logits, labels })
    }

    pub fn len(&self) -> usize {
        self.logits.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.rows() == 0
    }

    pub fn classes(&self) -> usize {
        self.logits.classes()
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self {
            logits: self.logits.select(indices)?,
            labels: self.labels.select(indices),
        })
    }

    pub fn losses(&self) -> LossVector {
        zero_one_loss(&argmax_predict(&self.logits), &self.labels)
            .expect("dataset lengths are validated at construction")
    }

    pub fn accuracy(&self) -> f64 {
        1.0 - self.losses().risk()
    }
}

/// Row argmax, ties resolved to the lowest class index.
pub fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

pub fn argmax_predict(logits: &LogitMatrix) -> PredictionVector {
    PredictionVector(logits.iter_rows().map(argmax_row).collect())
}

pub fn zero_one_loss(preds: &PredictionVector, labels: &LabelVector) -> Result<LossVector> {
    if preds.len() != labels.len() {
        return Err(Error::Dimension {
            what: "labels vs predictions",
            expected: preds.len(),
            found: labels.len(),
        });
    }
    Ok(LossVector::from_errors(
        preds.0.iter().zip(&labels.0).map(|(p, y)| p != y),
    ))
}

/// Softmax of a finite row, evaluated after subtracting the row maximum.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let top = argmax_row(z);
    let m = z[top];
    let total = kernel::sum_exp(&z.iter().map(|v| v - m).collect::<Vec<_>>(), 1.0);
    z.iter().map(|v| kernel::exp_nonpos(v - m) / total).collect()
}
