//! Candidate evaluation shared by all tuners.
//!
//! A [`Prepared`] dataset caches the max-centred rows, so a temperature or
//! p-norm candidate costs one pass of the softmax kernel over the matrix.
//! Every softmax base requested for that candidate is scored from that
//! single pass. The arithmetic mirrors `estimators::score_row` operation for
//! operation, which keeps tuned objective values bitwise equal to
//! `aurc(apply_estimator(..))`.

use rayon::prelude::*;

use crate::estimators::{lp_norm, softmax_score, BaseEstimatorKind};
use crate::kernel;
use crate::metrics::aurc_scores;
use crate::types::Dataset;

/// Target size of a row block in [`Prepared::sweep_softmax`].
const BLOCK_BYTES: usize = 128 * 1024;

pub(crate) struct Prepared<'a> {
    pub ds: &'a Dataset,
    pub rows: usize,
    pub classes: usize,
    pub centered: Vec<f64>,
    pub top: Vec<usize>,
    pub runner_up: Vec<usize>,
    pub losses: Vec<u8>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct SoftmaxEval {
    /// AURC per requested base, in request order.
    pub aurc: Vec<f64>,
    pub nll: Option<f64>,
}

/// A row-rescaled copy of the centred matrix, `d_ik = c_ik / ||z_i||_p`.
pub(crate) struct Normalized {
    pub values: Vec<f64>,
    pub degenerate: usize,
}

impl<'a> Prepared<'a> {
    pub fn new(ds: &'a Dataset) -> Self {
        let (rows, classes) = (ds.len(), ds.classes());
        let mut centered = vec![0.0; rows * classes];
        let mut top = Vec::with_capacity(rows);
        let mut runner_up = Vec::with_capacity(rows);
        for (z, out) in ds.logits.iter_rows().zip(centered.chunks_exact_mut(classes)) {
            let (t, r) = kernel::top_two(z);
            kernel::center_into(z, t, out);
            top.push(t);
            runner_up.push(r);
        }
        Self {
            ds,
            rows,
            classes,
            centered,
            top,
            runner_up,
            losses: ds.losses().as_slice().to_vec(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.centered[i * self.classes..(i + 1) * self.classes]
    }

    pub fn logit_row(&self, i: usize) -> &[f64] {
        self.ds.logits.row(i)
    }

    /// Zero-norm rows keep their centred values (divisor 1) and are counted.
    pub fn normalized(&self, p: u32) -> Normalized {
        let (norms, degenerate) = self.normalized_norms(p);
        let mut values = vec![0.0; self.centered.len()];
        for (i, norm) in norms.into_iter().enumerate() {
            let out = &mut values[i * self.classes..(i + 1) * self.classes];
            for (o, &c) in out.iter_mut().zip(self.row(i)) {
                *o = c / norm;
            }
        }
        Normalized {
            values,
            degenerate,
        }
    }

    /// Row norms with zeros replaced by 1, and the number replaced.
    pub fn normalized_norms(&self, p: u32) -> (Vec<f64>, usize) {
        let mut degenerate = 0;
        let norms = (0..self.rows)
            .map(|i| match lp_norm(self.logit_row(i), p) {
                0.0 => {
                    degenerate += 1;
                    1.0
                }
                n => n,
            })
            .collect();
        (norms, degenerate)
    }

    pub fn aurc_of(&self, scores: &[f64]) -> f64 {
        let mut keys = Vec::with_capacity(scores.len());
        aurc_scores(scores, &self.losses, &mut keys)
    }

    /// Scores row `i` of `rows * inv_t` for each base into `scores` and
    /// returns the row's NLL term.
    #[inline]
    fn score_row(&self, d: &[f64], i: usize, inv_t: f64, bases: &[BaseEstimatorKind], scores: &mut [f64]) -> f64 {
        let total = if bases.is_empty() {
            kernel::sum_exp(d, inv_t)
        } else {
            let sums = kernel::softmax_sums(d, inv_t);
            let runner_x = d[self.runner_up[i]] * inv_t;
            for (b, out) in bases.iter().zip(scores.iter_mut()) {
                *out = softmax_score(*b, &sums, runner_x);
            }
            sums.exp
        };
        total.ln() - d[self.ds.labels.as_slice()[i]] * inv_t
    }

    /// One candidate: the softmax of `rows * inv_t` for every sample.
    pub fn eval_softmax(
        &self,
        rows: &[f64],
        inv_t: f64,
        bases: &[BaseEstimatorKind],
        want_nll: bool,
    ) -> SoftmaxEval {
        let c = self.classes;
        let mut scores: Vec<Vec<f64>> = bases.iter().map(|_| Vec::with_capacity(self.rows)).collect();
        let mut row_scores = vec![0.0; bases.len()];
        let mut nll_total = 0.0;
        for (i, d) in rows.chunks_exact(c).enumerate() {
            let term = self.score_row(d, i, inv_t, bases, &mut row_scores);
            for (out, &v) in scores.iter_mut().zip(&row_scores) {
                out.push(v);
            }
            if want_nll {
                nll_total += term;
            }
        }
        let mut keys = Vec::with_capacity(self.rows);
        SoftmaxEval {
            aurc: scores
                .iter()
                .map(|s| aurc_scores(s, &self.losses, &mut keys))
                .collect(),
            nll: want_nll.then(|| nll_total / self.rows as f64),
        }
    }

    /// Evaluates every temperature; results keep grid order and equal
    /// [`Self::eval_softmax`] bit for bit.
    ///
    /// Temperatures are taken in groups. Within a group, blocks of rows are
    /// scored in parallel at every temperature of the group while the block
    /// is cache-resident, then each temperature is reduced in parallel.
    pub fn sweep_softmax(
        &self,
        rows: &[f64],
        temperatures: &[f64],
        bases: &[BaseEstimatorKind],
        want_nll: bool,
    ) -> Vec<SoftmaxEval> {
        const GROUP: usize = 32;
        let c = self.classes;
        let block = (BLOCK_BYTES / (8 * c)).clamp(1, 256);
        // Per temperature and row: one score per base, then the NLL term.
        let width = bases.len() + 1;
        let mut out = Vec::with_capacity(temperatures.len());
        for group in temperatures.chunks(GROUP) {
            let blocks: Vec<Vec<f64>> = (0..self.rows.div_ceil(block))
                .into_par_iter()
                .map(|b| {
                    let (lo, hi) = (b * block, ((b + 1) * block).min(self.rows));
                    let len = hi - lo;
                    let mut buf = vec![0.0; group.len() * width * len];
                    let mut row_scores = vec![0.0; bases.len()];
                    for (ti, &t) in group.iter().enumerate() {
                        let inv_t = 1.0 / t;
                        let base = ti * width * len;
                        for i in lo..hi {
                            let d = &rows[i * c..(i + 1) * c];
                            let term = self.score_row(d, i, inv_t, bases, &mut row_scores);
                            for (k, &v) in row_scores.iter().enumerate() {
                                buf[base + k * len + i - lo] = v;
                            }
                            buf[base + bases.len() * len + i - lo] = term;
                        }
                    }
                    buf
                })
                .collect();
            let gathered = |ti: usize, k: usize| {
                blocks.iter().flat_map(move |buf| {
                    let len = buf.len() / (group.len() * width);
                    let start = (ti * width + k) * len;
                    buf[start..start + len].iter().copied()
                })
            };
            out.par_extend((0..group.len()).into_par_iter().map(|ti| {
                let mut keys = Vec::with_capacity(self.rows);
                let aurc = (0..bases.len())
                    .map(|k| {
                        let scores: Vec<f64> = gathered(ti, k).collect();
                        aurc_scores(&scores, &self.losses, &mut keys)
                    })
                    .collect();
                let nll = want_nll.then(|| {
                    let mut total = 0.0;
                    for term in gathered(ti, bases.len()) {
                        total += term;
                    }
                    total / self.rows as f64
                });
                SoftmaxEval { aurc, nll }
            }));
        }
        out
    }

    /// Scores of MaxLogit/LogitsMargin, optionally divided by row norms.
    pub fn invariant_scores(&self, base: BaseEstimatorKind, norms: Option<&[f64]>) -> Vec<f64> {
        (0..self.rows)
            .map(|i| {
                let z = self.logit_row(i);
                let raw = match base {
                    BaseEstimatorKind::MaxLogit => z[self.top[i]],
                    BaseEstimatorKind::LogitsMargin => z[self.top[i]] - z[self.runner_up[i]],
                    _ => unreachable!("{base} depends on the softmax"),
                };
                match norms {
                    Some(n) => raw / n[i],
                    None => raw,
                }
            })
            .collect()
    }
}
