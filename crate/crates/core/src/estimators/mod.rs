//! Logit-based confidence estimators and the logit transformations that
//! can be stacked in front of them.
//!
//! A standard estimator is a base score (one of six parameter-free
//! functions of the logit row) applied after a transformation: identity,
//! temperature scaling `z / T`, or p-norm normalisation
//! `z / (tau * ||z||_p)`. All softmax-based scores are evaluated on the
//! max-centred row through [`crate::kernel`], so every code path that
//! scores a row with a given spec produces the same bits.

mod tunable;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{self, SoftmaxSums};
use crate::types::{ConfidenceVector, LogitMatrix};

pub(crate) use tunable::{hts_temperature_from_entropy, mean_entropy_of_centered};
pub use tunable::{
    bk_score, ets_score, hts_score, hts_temperature, HtsScore, TunableEstimator, TunableKind,
    HTS_MIN_TEMPERATURE,
};

/// The six parameter-free base scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseEstimatorKind {
    Msp,
    SoftmaxMargin,
    MaxLogit,
    LogitsMargin,
    #[serde(rename = "neg-entropy")]
    NegativeEntropy,
    #[serde(rename = "neg-gini")]
    NegativeGini,
}

impl BaseEstimatorKind {
    pub const ALL: [BaseEstimatorKind; 6] = [
        Self::Msp,
        Self::SoftmaxMargin,
        Self::MaxLogit,
        Self::LogitsMargin,
        Self::NegativeEntropy,
        Self::NegativeGini,
    ];

    /// Bases computed from the softmax of the (transformed) logits.
    pub const SOFTMAX: [BaseEstimatorKind; 4] = [
        Self::Msp,
        Self::SoftmaxMargin,
        Self::NegativeEntropy,
        Self::NegativeGini,
    ];

    /// MaxLogit and LogitsMargin: temperature only rescales them, so their
    /// ranking ignores `T` (and `tau` under p-norm).
    pub fn is_scale_invariant(self) -> bool {
        matches!(self, Self::MaxLogit | Self::LogitsMargin)
    }

    pub fn cli_name(self) -> &'static str {
        match self {
            Self::Msp => "msp",
            Self::SoftmaxMargin => "softmax-margin",
            Self::MaxLogit => "max-logit",
            Self::LogitsMargin => "logits-margin",
            Self::NegativeEntropy => "neg-entropy",
            Self::NegativeGini => "neg-gini",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Self::Msp => "MSP",
            Self::SoftmaxMargin => "SoftmaxMargin",
            Self::MaxLogit => "MaxLogit",
            Self::LogitsMargin => "LogitsMargin",
            Self::NegativeEntropy => "NegativeEntropy",
            Self::NegativeGini => "NegativeGini",
        }
    }
}

impl fmt::Display for BaseEstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for BaseEstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.cli_name() == s)
            .ok_or_else(|| Error::param(format!("unknown base estimator '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TransformSpec {
    Raw,
    TemperatureScale { temperature: f64 },
    #[serde(rename = "pnorm")]
    PNorm { p: u32, tau: f64 },
}

impl TransformSpec {
    fn validate(&self) -> Result<()> {
        match *self {
            TransformSpec::Raw => Ok(()),
            TransformSpec::TemperatureScale { temperature } => check_positive("temperature", temperature),
            TransformSpec::PNorm { tau, .. } => check_positive("tau", tau),
        }
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must be a positive finite number, got {v}")))
    }
}

/// A base score plus the transformation applied to logits before it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "UncheckedSpec")]
pub struct EstimatorSpec {
    base: BaseEstimatorKind,
    transform: TransformSpec,
    #[serde(default)]
    fallback_applied: bool,
}

#[derive(Deserialize)]
struct UncheckedSpec {
    base: BaseEstimatorKind,
    transform: TransformSpec,
    #[serde(default)]
    fallback_applied: bool,
}

impl TryFrom<UncheckedSpec> for EstimatorSpec {
    type Error = Error;

    fn try_from(raw: UncheckedSpec) -> Result<Self> {
        let mut spec = EstimatorSpec::new(raw.base, raw.transform)?;
        spec.fallback_applied = raw.fallback_applied;
        Ok(spec)
    }
}

impl EstimatorSpec {
    /// Rejects temperature scaling of MaxLogit/LogitsMargin and pins their
    /// p-norm `tau` to 1.
    pub fn new(base: BaseEstimatorKind, transform: TransformSpec) -> Result<Self> {
        transform.validate()?;
        let transform = match transform {
            TransformSpec::TemperatureScale { .. } if base.is_scale_invariant() => {
                return Err(Error::param(format!(
                    "temperature scaling does not change the ranking of {base}"
                )))
            }
            TransformSpec::PNorm { p, .. } if base.is_scale_invariant() => {
                TransformSpec::PNorm { p, tau: 1.0 }
            }
            t => t,
        };
        Ok(Self {
            base,
            transform,
            fallback_applied: false,
        })
    }

    pub fn raw(base: BaseEstimatorKind) -> Self {
        Self {
            base,
            transform: TransformSpec::Raw,
            fallback_applied: false,
        }
    }

    /// Plain MSP marked as the result of a fallback.
    pub fn msp_fallback() -> Self {
        Self {
            fallback_applied: true,
            ..Self::raw(BaseEstimatorKind::Msp)
        }
    }

    pub fn base(&self) -> BaseEstimatorKind {
        self.base
    }

    pub fn transform(&self) -> TransformSpec {
        self.transform
    }

    pub fn fallback_applied(&self) -> bool {
        self.fallback_applied
    }

    pub fn apply(&self, logits: &LogitMatrix) -> Result<ConfidenceVector> {
        apply_estimator(self, logits)
    }
}

impl fmt::Display for EstimatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.transform {
            TransformSpec::Raw => write!(f, "{}", self.base),
            TransformSpec::TemperatureScale { temperature } => {
                write!(f, "{}-TS(T={temperature})", self.base)
            }
            TransformSpec::PNorm { p, .. } if self.base.is_scale_invariant() => {
                write!(f, "{}-pNorm(p={p})", self.base)
            }
            TransformSpec::PNorm { p, tau } => write!(f, "{}-pNorm(p={p},tau={tau})", self.base),
        }
    }
}

/// Either a standard transform/base estimator or one of the composite
/// tunable scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Estimator {
    Standard(EstimatorSpec),
    Tunable(TunableEstimator),
}

impl Estimator {
    pub fn apply(&self, logits: &LogitMatrix) -> Result<ConfidenceVector> {
        match self {
            Estimator::Standard(spec) => apply_estimator(spec, logits),
            Estimator::Tunable(t) => t.apply(logits),
        }
    }

    pub fn is_fallback(&self) -> bool {
        matches!(self, Estimator::Standard(s) if s.fallback_applied())
    }
}

impl From<EstimatorSpec> for Estimator {
    fn from(spec: EstimatorSpec) -> Self {
        Estimator::Standard(spec)
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::Standard(s) => s.fmt(f),
            Estimator::Tunable(t) => t.fmt(f),
        }
    }
}

// ---------------------------------------------------------------------------
// Row-level scores
// ---------------------------------------------------------------------------

fn centered(z: &[f64]) -> (Vec<f64>, usize) {
    let (top, second) = kernel::top_two(z);
    let mut d = vec![0.0; z.len()];
    kernel::center_into(z, top, &mut d);
    (d, second)
}

pub fn msp(z: &[f64]) -> f64 {
    let (d, _) = centered(z);
    1.0 / kernel::sum_exp(&d, 1.0)
}

pub fn softmax_margin(z: &[f64]) -> f64 {
    let (d, second) = centered(z);
    kernel::softmax_sums(&d, 1.0).softmax_margin(d[second])
}

pub fn max_logit(z: &[f64]) -> f64 {
    z[kernel::top_two(z).0]
}

pub fn logits_margin(z: &[f64]) -> f64 {
    let (top, second) = kernel::top_two(z);
    z[top] - z[second]
}

pub fn negative_entropy(z: &[f64]) -> f64 {
    let (d, _) = centered(z);
    kernel::softmax_sums(&d, 1.0).negative_entropy()
}

pub fn negative_gini(z: &[f64]) -> f64 {
    let (d, _) = centered(z);
    kernel::softmax_sums(&d, 1.0).negative_gini()
}

pub fn temperature_scale(z: &[f64], temperature: f64) -> Result<Vec<f64>> {
    check_positive("temperature", temperature)?;
    Ok(z.iter().map(|v| v / temperature).collect())
}

/// `||z||_p` for `p >= 1`; for `p = 0`, the number of nonzero entries.
pub fn lp_norm(z: &[f64], p: u32) -> f64 {
    match p {
        0 => z.iter().filter(|v| **v != 0.0).count() as f64,
        1 => z.iter().map(|v| v.abs()).sum(),
        _ => {
            let scale = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if scale == 0.0 {
                return 0.0;
            }
            let inner: f64 = z.iter().map(|v| (v.abs() / scale).powi(p as i32)).sum();
            scale * inner.powf(1.0 / p as f64)
        }
    }
}

pub fn pnorm_normalize(z: &[f64], p: u32, tau: f64) -> Result<Vec<f64>> {
    check_positive("tau", tau)?;
    let norm = lp_norm(z, p);
    if norm == 0.0 {
        return Err(Error::Degenerate {
            row: 0,
            reason: format!("{p}-norm of the logit row is zero"),
        });
    }
    let div = tau * norm;
    Ok(z.iter().map(|v| v / div).collect())
}

/// Scores one row under `spec`. `scratch` must have the row's length.
pub(crate) fn score_row(
    base: BaseEstimatorKind,
    transform: TransformSpec,
    z: &[f64],
    scratch: &mut [f64],
) -> std::result::Result<f64, String> {
    let (top, second) = kernel::top_two(z);
    let (norm, inv_t) = match transform {
        TransformSpec::Raw => (1.0, 1.0),
        TransformSpec::TemperatureScale { temperature } => (1.0, 1.0 / temperature),
        TransformSpec::PNorm { p, tau } => {
            let norm = lp_norm(z, p);
            if norm == 0.0 {
                return Err(format!("{p}-norm of the logit row is zero"));
            }
            (norm, 1.0 / tau)
        }
    };
    let pnorm = matches!(transform, TransformSpec::PNorm { .. });
    match base {
        BaseEstimatorKind::MaxLogit => Ok(if pnorm { z[top] / norm } else { z[top] }),
        BaseEstimatorKind::LogitsMargin => {
            let gap = z[top] - z[second];
            Ok(if pnorm { gap / norm } else { gap })
        }
        _ => {
            kernel::center_into(z, top, scratch);
            if pnorm {
                for v in scratch.iter_mut() {
                    *v /= norm;
                }
            }
            let sums = kernel::softmax_sums(scratch, inv_t);
            Ok(softmax_score(base, &sums, scratch[second] * inv_t))
        }
    }
}

#[inline]
pub(crate) fn softmax_score(base: BaseEstimatorKind, sums: &SoftmaxSums, runner_up_x: f64) -> f64 {
    match base {
        BaseEstimatorKind::Msp => sums.msp(),
        BaseEstimatorKind::SoftmaxMargin => sums.softmax_margin(runner_up_x),
        BaseEstimatorKind::NegativeEntropy => sums.negative_entropy(),
        BaseEstimatorKind::NegativeGini => sums.negative_gini(),
        BaseEstimatorKind::MaxLogit | BaseEstimatorKind::LogitsMargin => {
            unreachable!("{base} is not a softmax score")
        }
    }
}

const ROW_CHUNK: usize = 256;

/// Transforms each row and scores it with the spec's base.
pub fn apply_estimator(spec: &EstimatorSpec, logits: &LogitMatrix) -> Result<ConfidenceVector> {
    let classes = logits.classes();
    let mut scores = vec![0.0; logits.rows()];
    scores
        .par_chunks_mut(ROW_CHUNK)
        .enumerate()
        .try_for_each(|(chunk, out)| {
            let mut scratch = vec![0.0; classes];
            for (j, slot) in out.iter_mut().enumerate() {
                let i = chunk * ROW_CHUNK + j;
                *slot = score_row(spec.base, spec.transform, logits.row(i), &mut scratch)
                    .map_err(|reason| Error::Degenerate { row: i, reason })?;
            }
            Ok::<_, Error>(())
        })?;
    ConfidenceVector::new(scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn msp_examples() {
        close(msp(&[0.0; 4]), 0.25, 1e-15);
        close(msp(&[LN2, 0.0]), 2.0 / 3.0, 1e-15);
        close(msp(&[10.0, 0.0]), 1.0 / (1.0 + (-10f64).exp()), 1e-15);
    }

    #[test]
    fn softmax_margin_examples() {
        close(softmax_margin(&[1.5; 5]), 0.0, 1e-15);
        close(softmax_margin(&[LN2, 0.0]), 1.0 / 3.0, 1e-15);
        close(softmax_margin(&[4f64.ln(), LN2, 0.0]), 2.0 / 7.0, 1e-15);
    }

    #[test]
    fn logit_examples() {
        assert_eq!(max_logit(&[3.0, 1.0, 0.0]), 3.0);
        assert_eq!(max_logit(&[-1.0, -5.0]), -1.0);
        assert_eq!(max_logit(&[2.5; 3]), 2.5);
        assert_eq!(logits_margin(&[3.0, 1.0, 0.0]), 2.0);
        assert_eq!(logits_margin(&[2.5; 3]), 0.0);
        assert_eq!(logits_margin(&[0.5, -0.5]), 1.0);
    }

    #[test]
    fn entropy_and_gini_examples() {
        close(negative_entropy(&[0.0; 4]), -(4f64.ln()), 1e-15);
        assert!(negative_entropy(&[60.0, 0.0, 0.0]) < 0.0);
        assert!(negative_entropy(&[60.0, 0.0, 0.0]) > -1e-20);
        let h = -(2.0 / 3.0 * (2f64 / 3.0).ln() + 1.0 / 3.0 * (1f64 / 3.0).ln());
        close(negative_entropy(&[LN2, 0.0]), -h, 1e-15);
        close(negative_entropy(&[LN2, 0.0]), -0.636_514_168_294_813_3, 1e-15);

        close(negative_gini(&[0.3; 5]), -1.0 + 0.2, 1e-15);
        close(negative_gini(&[60.0, 0.0, 0.0]), 0.0, 1e-15);
        close(negative_gini(&[LN2, 0.0]), -4.0 / 9.0, 1e-15);
    }

    #[test]
    fn temperature_scale_examples() {
        assert_eq!(temperature_scale(&[2.0, 4.0], 1.0).unwrap(), vec![2.0, 4.0]);
        assert_eq!(temperature_scale(&[2.0, 4.0], 2.0).unwrap(), vec![1.0, 2.0]);
        assert!(temperature_scale(&[2.0, 4.0], 0.0).is_err());
        assert!(temperature_scale(&[2.0, 4.0], -1.0).is_err());
    }

    #[test]
    fn pnorm_examples() {
        let v = pnorm_normalize(&[3.0, 4.0], 2, 1.0).unwrap();
        close(v[0], 0.6, 1e-15);
        close(v[1], 0.8, 1e-15);
        let v = pnorm_normalize(&[3.0, 4.0], 1, 1.0).unwrap();
        close(v[0], 3.0 / 7.0, 1e-15);
        close(v[1], 4.0 / 7.0, 1e-15);
        assert_eq!(pnorm_normalize(&[3.0, 4.0, 0.0], 0, 0.5).unwrap(), vec![3.0, 4.0, 0.0]);
        assert!(matches!(
            pnorm_normalize(&[0.0, 0.0], 2, 1.0),
            Err(Error::Degenerate { .. })
        ));
        assert!(matches!(
            pnorm_normalize(&[0.0, 0.0], 0, 1.0),
            Err(Error::Degenerate { .. })
        ));
        assert!(pnorm_normalize(&[1.0, 0.0], 2, 0.0).is_err());
    }

    #[test]
    fn lp_norm_is_overflow_safe() {
        let big = [1e300, -1e300];
        close(lp_norm(&big, 10) / 1e300, 2f64.powf(0.1), 1e-14);
        close(lp_norm(&[3.0, 4.0], 2), 5.0, 1e-15);
    }

    #[test]
    fn apply_examples() {
        let m = LogitMatrix::from_rows(&[[0.0, 0.0]]).unwrap();
        let s = EstimatorSpec::raw(BaseEstimatorKind::Msp);
        close(apply_estimator(&s, &m).unwrap().as_slice()[0], 0.5, 1e-15);

        let m = LogitMatrix::from_rows(&[[3.0, 4.0]]).unwrap();
        let s = EstimatorSpec::new(
            BaseEstimatorKind::MaxLogit,
            TransformSpec::PNorm { p: 2, tau: 1.0 },
        )
        .unwrap();
        close(apply_estimator(&s, &m).unwrap().as_slice()[0], 0.8, 1e-15);

        let m = LogitMatrix::from_rows(&[[LN2, 0.0]]).unwrap();
        let s = EstimatorSpec::new(
            BaseEstimatorKind::Msp,
            TransformSpec::TemperatureScale { temperature: 0.5 },
        )
        .unwrap();
        close(apply_estimator(&s, &m).unwrap().as_slice()[0], 0.8, 1e-15);
    }

    #[test]
    fn apply_reports_degenerate_row_index() {
        let m = LogitMatrix::from_rows(&[[1.0, 2.0], [0.0, 0.0], [3.0, 1.0]]).unwrap();
        let s = EstimatorSpec::new(BaseEstimatorKind::Msp, TransformSpec::PNorm { p: 2, tau: 1.0 })
            .unwrap();
        match apply_estimator(&s, &m) {
            Err(Error::Degenerate { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected degenerate error, got {other:?}"),
        }
    }

    #[test]
    fn spec_construction_rules() {
        for base in [BaseEstimatorKind::MaxLogit, BaseEstimatorKind::LogitsMargin] {
            assert!(EstimatorSpec::new(base, TransformSpec::TemperatureScale { temperature: 2.0 })
                .is_err());
            let s = EstimatorSpec::new(base, TransformSpec::PNorm { p: 3, tau: 0.25 }).unwrap();
            assert_eq!(s.transform(), TransformSpec::PNorm { p: 3, tau: 1.0 });
        }
        let s = EstimatorSpec::new(BaseEstimatorKind::Msp, TransformSpec::PNorm { p: 3, tau: 0.25 })
            .unwrap();
        assert_eq!(s.transform(), TransformSpec::PNorm { p: 3, tau: 0.25 });
        assert!(EstimatorSpec::new(
            BaseEstimatorKind::Msp,
            TransformSpec::TemperatureScale { temperature: -1.0 }
        )
        .is_err());
    }

    #[test]
    fn spec_deserialization_validates() {
        let bad = r#"{"base":"max-logit","transform":{"kind":"temperature-scale","temperature":2.0}}"#;
        assert!(serde_json::from_str::<EstimatorSpec>(bad).is_err());
        let ok = r#"{"base":"max-logit","transform":{"kind":"pnorm","p":2,"tau":5.0}}"#;
        let s: EstimatorSpec = serde_json::from_str(ok).unwrap();
        assert_eq!(s.transform(), TransformSpec::PNorm { p: 2, tau: 1.0 });
    }

    #[test]
    fn base_names_round_trip() {
        for b in BaseEstimatorKind::ALL {
            assert_eq!(b.cli_name().parse::<BaseEstimatorKind>().unwrap(), b);
            let json = serde_json::to_string(&b).unwrap();
            assert_eq!(json, format!("\"{}\"", b.cli_name()));
        }
    }
}
