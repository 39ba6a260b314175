//! Composite scores with their own hyperparameters: ensemble temperature
//! scaling (ETS), the Boursinos-Koutsoukos linear combination (BK) and
//! entropy-based temperature scaling (HTS).

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel;
use crate::types::{ConfidenceVector, LogitMatrix};

/// Lower bound applied to the HTS temperature when the softplus underflows.
pub const HTS_MIN_TEMPERATURE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TunableKind {
    Ets,
    Bk,
    Hts,
}

impl TunableKind {
    pub fn name(self) -> &'static str {
        match self {
            TunableKind::Ets => "ETS",
            TunableKind::Bk => "BK",
            TunableKind::Hts => "HTS",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", try_from = "UncheckedTunable")]
pub enum TunableEstimator {
    /// `w1 * MSP(z / T) + w2 * MSP(z)`; the constant `w3 / C` term of the
    /// original method is omitted since it cannot change the ranking.
    Ets { w1: f64, w2: f64, temperature: f64 },
    /// `a * MSP(z) + b * (1 - runner-up probability)`.
    Bk { a: f64, b: f64 },
    /// `MSP(z / T_H(z))`, `T_H = softplus(b + w ln H(z))`, with `H` the
    /// class-averaged entropy of `softmax(z)`.
    Hts { b: f64, w: f64 },
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum UncheckedTunable {
    Ets { w1: f64, w2: f64, temperature: f64 },
    Bk { a: f64, b: f64 },
    Hts { b: f64, w: f64 },
}

impl TryFrom<UncheckedTunable> for TunableEstimator {
    type Error = Error;

    fn try_from(raw: UncheckedTunable) -> Result<Self> {
        match raw {
            UncheckedTunable::Ets { w1, w2, temperature } => Self::ets(w1, w2, temperature),
            UncheckedTunable::Bk { a, b } => Self::bk(a, b),
            UncheckedTunable::Hts { b, w } => Self::hts(b, w),
        }
    }
}

fn check_range(name: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if (lo..=hi).contains(&v) {
        Ok(())
    } else {
        Err(Error::param(format!("{name} = {v} outside [{lo}, {hi}]")))
    }
}

impl TunableEstimator {
    pub fn ets(w1: f64, w2: f64, temperature: f64) -> Result<Self> {
        check_range("ETS w1", w1, 0.0, 1.0)?;
        check_range("ETS w2", w2, 0.0, 1.0)?;
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::param(format!("ETS temperature must be positive, got {temperature}")));
        }
        Ok(Self::Ets { w1, w2, temperature })
    }

    pub fn bk(a: f64, b: f64) -> Result<Self> {
        check_range("BK a", a, -1.0, 1.0)?;
        check_range("BK b", b, -1.0, 1.0)?;
        Ok(Self::Bk { a, b })
    }

    pub fn hts(b: f64, w: f64) -> Result<Self> {
        check_range("HTS b", b, -3.0, 1.0)?;
        check_range("HTS w", w, -1.0, 1.0)?;
        Ok(Self::Hts { b, w })
    }

    pub fn kind(&self) -> TunableKind {
        match self {
            Self::Ets { .. } => TunableKind::Ets,
            Self::Bk { .. } => TunableKind::Bk,
            Self::Hts { .. } => TunableKind::Hts,
        }
    }

    /// Scores a single row.
    pub fn score(&self, z: &[f64]) -> f64 {
        match *self {
            Self::Ets { w1, w2, temperature } => ets_unchecked(z, w1, w2, temperature),
            Self::Bk { a, b } => bk_score(z, a, b),
            Self::Hts { b, w } => hts_score(z, b, w).score,
        }
    }

    pub fn apply(&self, logits: &LogitMatrix) -> Result<ConfidenceVector> {
        let scores: Vec<f64> = (0..logits.rows())
            .into_par_iter()
            .map(|i| self.score(logits.row(i)))
            .collect();
        ConfidenceVector::new(scores)
    }
}

impl fmt::Display for TunableEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Ets { w1, w2, temperature } => write!(f, "ETS(w1={w1},w2={w2},T={temperature})"),
            Self::Bk { a, b } => write!(f, "BK(a={a},b={b})"),
            Self::Hts { b, w } => write!(f, "HTS(b={b},w={w})"),
        }
    }
}

struct RowParts {
    centered: Vec<f64>,
    runner_up: usize,
}

fn row_parts(z: &[f64]) -> RowParts {
    let (top, runner_up) = kernel::top_two(z);
    let mut centered = vec![0.0; z.len()];
    kernel::center_into(z, top, &mut centered);
    RowParts { centered, runner_up }
}

fn ets_unchecked(z: &[f64], w1: f64, w2: f64, temperature: f64) -> f64 {
    let parts = row_parts(z);
    let scaled = 1.0 / kernel::sum_exp(&parts.centered, 1.0 / temperature);
    let plain = 1.0 / kernel::sum_exp(&parts.centered, 1.0);
    w1 * scaled + w2 * plain
}

pub fn ets_score(z: &[f64], w1: f64, w2: f64, temperature: f64) -> Result<f64> {
    TunableEstimator::ets(w1, w2, temperature)?;
    Ok(ets_unchecked(z, w1, w2, temperature))
}

pub fn bk_score(z: &[f64], a: f64, b: f64) -> f64 {
    let parts = row_parts(z);
    let total = kernel::sum_exp(&parts.centered, 1.0);
    let runner_up = kernel::exp_nonpos(parts.centered[parts.runner_up]) / total;
    a / total + b * (1.0 - runner_up)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HtsScore {
    pub score: f64,
    pub temperature: f64,
    /// Set when the softplus fell below [`HTS_MIN_TEMPERATURE`].
    pub clamped: bool,
}

/// `softplus(x) = ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// HTS temperature from the row's class-averaged entropy `mean_entropy`.
pub(crate) fn hts_temperature_from_entropy(mean_entropy: f64, b: f64, w: f64) -> (f64, bool) {
    // A saturated softmax can round the entropy to exactly zero.
    let h = mean_entropy.max(f64::MIN_POSITIVE);
    let arg = if w == 0.0 { b } else { b + w * h.ln() };
    let t = softplus(arg);
    if t < HTS_MIN_TEMPERATURE {
        (HTS_MIN_TEMPERATURE, true)
    } else {
        (t, false)
    }
}

pub(crate) fn mean_entropy_of_centered(centered: &[f64]) -> f64 {
    -kernel::softmax_sums(centered, 1.0).negative_entropy() / centered.len() as f64
}

pub fn hts_temperature(z: &[f64], b: f64, w: f64) -> (f64, bool) {
    let parts = row_parts(z);
    hts_temperature_from_entropy(mean_entropy_of_centered(&parts.centered), b, w)
}

pub fn hts_score(z: &[f64], b: f64, w: f64) -> HtsScore {
    let parts = row_parts(z);
    let (temperature, clamped) =
        hts_temperature_from_entropy(mean_entropy_of_centered(&parts.centered), b, w);
    HtsScore {
        score: 1.0 / kernel::sum_exp(&parts.centered, 1.0 / temperature),
        temperature,
        clamped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::msp;

    const LN2: f64 = std::f64::consts::LN_2;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn ets_examples() {
        let z = [1.3, -0.2, 0.7];
        close(ets_score(&z, 0.0, 1.0, 0.4).unwrap(), msp(&z), 1e-15);
        close(ets_score(&z, 1.0, 0.0, 1.0).unwrap(), msp(&z), 1e-15);
        close(ets_score(&[LN2, 0.0], 0.5, 0.5, 0.5).unwrap(), 11.0 / 15.0, 1e-15);
        assert!(ets_score(&z, 0.5, 0.5, 0.0).is_err());
        assert!(ets_score(&z, 1.5, 0.5, 1.0).is_err());
    }

    #[test]
    fn bk_examples() {
        let z = [0.1, 2.0, -1.0];
        close(bk_score(&z, 1.0, 0.0), msp(&z), 1e-15);
        close(bk_score(&[LN2, 0.0], 0.0, 1.0), 2.0 / 3.0, 1e-15);
        close(bk_score(&[0.0, 0.0], 1.0, 1.0), 1.0, 1e-15);
    }

    #[test]
    fn hts_with_zero_weight_is_plain_temperature_scaling() {
        let z = [1.0, 0.3, -2.0, 0.9];
        for b in [-3.0, -1.0, 0.0, 1.0] {
            let t = softplus(b);
            let got = hts_score(&z, b, 0.0);
            close(got.temperature, (1.0 + b.exp()).ln(), 1e-15);
            let expected = msp(&z.iter().map(|v| v / t).collect::<Vec<_>>());
            close(got.score, expected, 1e-14);
        }
    }

    #[test]
    fn hts_uniform_row_is_fixed_point() {
        for (b, w) in [(-3.0, -1.0), (0.0, 0.5), (1.0, 1.0)] {
            close(hts_score(&[0.4; 5], b, w).score, 0.2, 1e-15);
        }
    }

    #[test]
    fn hts_example_at_origin() {
        let got = hts_score(&[LN2, 0.0], 0.0, 0.0);
        close(got.temperature, LN2, 1e-15);
        let t = LN2;
        let expected = 1.0 / (1.0 + (-LN2 / t).exp());
        close(got.score, expected, 1e-15);
        assert!(!got.clamped);
    }

    #[test]
    fn hts_clamps_underflowing_temperature() {
        // Saturated row: entropy ~ 0, w > 0 drives the softplus argument to -inf.
        let got = hts_score(&[800.0, 0.0, 0.0], -3.0, 1.0);
        assert!(got.clamped);
        assert_eq!(got.temperature, HTS_MIN_TEMPERATURE);
        assert!(got.score.is_finite());
    }

    #[test]
    fn construction_enforces_ranges() {
        assert!(TunableEstimator::bk(-1.0, 1.0).is_ok());
        assert!(TunableEstimator::bk(-1.01, 0.0).is_err());
        assert!(TunableEstimator::hts(-3.0, -1.0).is_ok());
        assert!(TunableEstimator::hts(1.5, 0.0).is_err());
        assert!(TunableEstimator::ets(0.0, 0.0, 1.0).is_ok());
        let bad = r#"{"kind":"bk","a":2.0,"b":0.0}"#;
        assert!(serde_json::from_str::<TunableEstimator>(bad).is_err());
    }
}
