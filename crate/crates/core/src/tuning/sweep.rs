use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{apply_fallback, tune_methods, GridSpec, Method};
use crate::error::{Error, Result};
use crate::io::{subsample, Artifact};
use crate::metrics::naurc;
use crate::types::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Tuning-subset sizes, each in `1..=tuning set size`.
    pub sizes: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
    /// Fallback margin on the raw AURC scale; `None` disables fallback.
    pub fallback_epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub size: usize,
    pub mean_naurc: f64,
    /// Population standard deviation over repetitions.
    pub std_naurc: f64,
    pub naurc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub method: Method,
    pub test_samples: usize,
    pub rows: Vec<SweepRow>,
}

impl Artifact for SweepReport {
    const KIND: &'static str = "sweep-report";
}

impl SweepReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("# {} ({} test samples)\n", self.method.label(), self.test_samples);
        out.push_str("size\tmean_naurc\tstd_naurc\n");
        for r in &self.rows {
            let _ = writeln!(out, "{}\t{:.6}\t{:.6}", r.size, r.mean_naurc, r.std_naurc);
        }
        out
    }
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Test NAURC of `method` tuned on random subsets of the tuning set.
///
/// Repetition `r` at size index `s` draws its subset from stream
/// `(r << 32) | s` of `seed`, so rows are reproducible individually.
pub fn data_efficiency_sweep(
    method: Method,
    tuning: &Dataset,
    test: &Dataset,
    grid: &GridSpec,
    config: &SweepConfig,
) -> Result<SweepReport> {
    if config.repetitions == 0 {
        return Err(Error::param("at least one repetition is required"));
    }
    if config.sizes.is_empty() {
        return Err(Error::param("no tuning sizes given"));
    }
    for &size in &config.sizes {
        if size == 0 || size > tuning.len() {
            return Err(Error::param(format!(
                "tuning size must be in 1..={}, got {size}",
                tuning.len()
            )));
        }
    }
    let test_losses = test.losses();
    let rows = config
        .sizes
        .iter()
        .enumerate()
        .map(|(s, &size)| {
            let naurc_values = (0..config.repetitions)
                .map(|r| {
                    let stream = ((r as u64) << 32) | s as u64;
                    let subset = tuning.select(&subsample(tuning.len(), size, config.seed, stream)?)?;
                    let mut result = tune_methods(&[method], &subset, grid)?.remove(0);
                    if let Some(eps) = config.fallback_epsilon {
                        result = apply_fallback(result, eps);
                    }
                    naurc(&result.estimator.apply(&test.logits)?, &test_losses)
                })
                .collect::<Result<Vec<f64>>>()?;
            let (mean_naurc, std_naurc) = mean_std(&naurc_values);
            Ok(SweepRow {
                size,
                mean_naurc,
                std_naurc,
                naurc: naurc_values,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport {
        method,
        test_samples: test.len(),
        rows,
    })
}
