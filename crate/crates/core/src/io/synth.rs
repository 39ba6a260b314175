//! Synthetic logits for experiments without a real model.
//!
//! Each sample has a latent logit row: standard normal noise on every class
//! plus a signal bump `s * m_i` on one uniformly chosen class, with
//! `m_i ~ LogNormal(0, 0.5)`. The label is drawn from the softmax of the
//! latent row, so the latent logits are calibrated at `T = 1` and labels
//! are uniform over classes. The scale `s` is solved by bisection so that
//! the expected accuracy (the mean MSP of the latent rows) matches the
//! requested accuracy.
//!
//! The released logits are the latent rows after an optional distortion,
//! rounded to `f32` so that CSV and raw binary files are both lossless.

use rand::Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::split::seeded_rng;
use crate::error::{Error, Result};
use crate::estimators::msp;
use crate::types::{softmax, Dataset, LabelVector, LogitMatrix};

const STREAM_LATENT: u64 = 0;
const STREAM_PILOT: u64 = 1;
const STREAM_DISTORTION: u64 = 2;
const PILOT_ROWS: usize = 1000;
const SIGNAL_SPREAD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distortion {
    None,
    /// Each row multiplied by its own `exp(N(norm_mu, norm_sigma))`.
    NormInflation,
    /// All logits divided by `underconfidence`.
    Underconfidence,
}

impl std::str::FromStr for Distortion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "norm-inflation" => Ok(Self::NormInflation),
            "underconfidence" => Ok(Self::Underconfidence),
            _ => Err(Error::param(format!("unknown distortion mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModelSpec {
    pub samples: usize,
    pub classes: usize,
    /// Expected top-1 accuracy of the latent model, in `(1/C, 1)`.
    pub accuracy: f64,
    pub norm_mu: f64,
    pub norm_sigma: f64,
    pub distortion: Distortion,
    /// Divisor applied by [`Distortion::Underconfidence`], > 1.
    pub underconfidence: f64,
    pub seed: u64,
}

impl Default for SyntheticModelSpec {
    fn default() -> Self {
        Self {
            samples: 10_000,
            classes: 100,
            accuracy: 0.75,
            norm_mu: 0.0,
            norm_sigma: 1.0,
            distortion: Distortion::None,
            underconfidence: 2.0,
            seed: 0,
        }
    }
}

impl SyntheticModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::param("synthetic dataset needs at least one sample"));
        }
        if self.classes < 2 {
            return Err(Error::param("synthetic dataset needs at least two classes"));
        }
        let chance = 1.0 / self.classes as f64;
        if !(self.accuracy > chance && self.accuracy < 1.0) {
            return Err(Error::param(format!(
                "accuracy must be in ({chance}, 1), got {}",
                self.accuracy
            )));
        }
        if !(self.norm_sigma >= 0.0 && self.norm_sigma.is_finite() && self.norm_mu.is_finite()) {
            return Err(Error::param("log-normal parameters must be finite with sigma >= 0"));
        }
        if !(self.underconfidence > 1.0 && self.underconfidence.is_finite()) {
            return Err(Error::param("underconfidence divisor must be greater than 1"));
        }
        Ok(())
    }
}

struct LatentDraws {
    noise: Vec<f64>,
    class: Vec<usize>,
    strength: Vec<f64>,
}

fn draw_latent(rng: &mut impl Rng, rows: usize, classes: usize) -> LatentDraws {
    let spread = LogNormal::new(0.0, SIGNAL_SPREAD).expect("valid log-normal");
    let mut noise = Vec::with_capacity(rows * classes);
    let mut class = Vec::with_capacity(rows);
    let mut strength = Vec::with_capacity(rows);
    for _ in 0..rows {
        class.push(rng.random_range(0..classes));
        strength.push(spread.sample(rng));
        noise.extend((0..classes).map(|_| -> f64 { rng.sample(StandardNormal) }));
    }
    LatentDraws {
        noise,
        class,
        strength,
    }
}

fn latent_row(d: &LatentDraws, classes: usize, i: usize, scale: f64, out: &mut [f64]) {
    out.copy_from_slice(&d.noise[i * classes..(i + 1) * classes]);
    out[d.class[i]] += scale * d.strength[i];
}

fn expected_accuracy(d: &LatentDraws, classes: usize, scale: f64) -> f64 {
    let rows = d.class.len();
    let mut row = vec![0.0; classes];
    let mut total = 0.0;
    for i in 0..rows {
        latent_row(d, classes, i, scale, &mut row);
        total += msp(&row);
    }
    total / rows as f64
}

fn solve_scale(spec: &SyntheticModelSpec) -> Result<f64> {
    let mut rng = seeded_rng(spec.seed, STREAM_PILOT);
    let pilot = draw_latent(&mut rng, PILOT_ROWS, spec.classes);
    let (mut lo, mut hi) = (0.0, 1.0);
    while expected_accuracy(&pilot, spec.classes, hi) < spec.accuracy {
        hi *= 2.0;
        if hi > 1e4 {
            return Err(Error::param(format!("accuracy {} is not reachable", spec.accuracy)));
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if expected_accuracy(&pilot, spec.classes, mid) < spec.accuracy {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn sample_label(rng: &mut impl Rng, row: &[f64]) -> usize {
    let probs = softmax(row);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

pub fn generate_synthetic(spec: &SyntheticModelSpec) -> Result<Dataset> {
    spec.validate()?;
    let (n, c) = (spec.samples, spec.classes);
    let scale = solve_scale(spec)?;

    let mut rng = seeded_rng(spec.seed, STREAM_LATENT);
    let draws = draw_latent(&mut rng, n, c);
    let mut values = vec![0.0; n * c];
    let mut labels = Vec::with_capacity(n);
    for (i, row) in values.chunks_exact_mut(c).enumerate() {
        latent_row(&draws, c, i, scale, row);
        labels.push(sample_label(&mut rng, row));
    }

    match spec.distortion {
        Distortion::None => {}
        Distortion::NormInflation => {
            let mut rng = seeded_rng(spec.seed, STREAM_DISTORTION);
            let factor = LogNormal::new(spec.norm_mu, spec.norm_sigma)
                .map_err(|e| Error::param(e.to_string()))?;
            for row in values.chunks_exact_mut(c) {
                let f = factor.sample(&mut rng);
                row.iter_mut().for_each(|v| *v *= f);
            }
        }
        Distortion::Underconfidence => {
            values.iter_mut().for_each(|v| *v /= spec.underconfidence);
        }
    }
    for v in values.iter_mut() {
        *v = *v as f32 as f64;
    }
    Dataset::new(LogitMatrix::new(n, c, values)?, LabelVector::new(labels, c)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(distortion: Distortion) -> SyntheticModelSpec {
        SyntheticModelSpec {
            samples: 4000,
            classes: 10,
            accuracy: 0.7,
            distortion,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn fixed_seed_reproduces() {
        let a = generate_synthetic(&small(Distortion::NormInflation)).unwrap();
        let b = generate_synthetic(&small(Distortion::NormInflation)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn accuracy_tracks_target() {
        let ds = generate_synthetic(&small(Distortion::None)).unwrap();
        let acc = ds.accuracy();
        // Binomial sd at n = 4000 is ~0.007; the pilot solve adds a little.
        assert!((acc - 0.7).abs() < 0.04, "accuracy {acc}");
    }

    #[test]
    fn distortions_keep_predictions_and_labels() {
        let base = generate_synthetic(&small(Distortion::None)).unwrap();
        for mode in [Distortion::NormInflation, Distortion::Underconfidence] {
            let d = generate_synthetic(&small(mode)).unwrap();
            assert_eq!(d.labels, base.labels);
            assert_eq!(
                crate::types::argmax_predict(&d.logits),
                crate::types::argmax_predict(&base.logits)
            );
        }
    }

    #[test]
    fn labels_cover_all_classes() {
        let ds = generate_synthetic(&small(Distortion::None)).unwrap();
        let mut seen = [0usize; 10];
        for &y in ds.labels.as_slice() {
            seen[y] += 1;
        }
        assert!(seen.iter().all(|&c| c > 300), "{seen:?}");
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = small(Distortion::None);
        s.accuracy = 0.05;
        assert!(generate_synthetic(&s).is_err());
        s.accuracy = 1.0;
        assert!(generate_synthetic(&s).is_err());
        let mut s = small(Distortion::Underconfidence);
        s.underconfidence = 0.5;
        assert!(generate_synthetic(&s).is_err());
    }
}
