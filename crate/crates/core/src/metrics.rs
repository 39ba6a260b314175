//! Selective-classification and misclassification-detection metrics.
//!
//! All ranking metrics share one total order: score descending, ties
//! broken by original index ascending. AURC is the mean selective risk
//! over the N accepted-prefix sizes of that order. AUROC is the
//! Mann-Whitney statistic, with half credit for tied scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ConfidenceVector, LossVector};

/// Maps a score to a `u64` whose unsigned order matches the float order.
/// `-0.0` and `0.0` share a key.
#[inline]
fn order_key(score: f64) -> u64 {
    let bits = (score + 0.0).to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    }
}

/// Fills `keys` with packed (descending score, ascending index) sort keys
/// and sorts them. The low 64 bits of each key are the sample index.
fn sorted_keys(scores: &[f64], keys: &mut Vec<u128>) {
    keys.clear();
    keys.extend(
        scores
            .iter()
            .enumerate()
            .map(|(i, &s)| ((!order_key(s) as u128) << 64) | i as u128),
    );
    keys.sort_unstable();
}

/// Indices by score descending, ties by index ascending.
pub fn rank_order(conf: &ConfidenceVector) -> Vec<usize> {
    let mut keys = Vec::with_capacity(conf.len());
    sorted_keys(conf.as_slice(), &mut keys);
    keys.iter().map(|&k| k as u64 as usize).collect()
}

fn check_lengths(conf: &ConfidenceVector, losses: &LossVector) -> Result<()> {
    if conf.len() != losses.len() {
        return Err(Error::Dimension {
            what: "losses vs confidences",
            expected: conf.len(),
            found: losses.len(),
        });
    }
    if conf.is_empty() {
        return Err(Error::param("metrics need at least one sample"));
    }
    Ok(())
}

/// Ordered (coverage, selective risk) points, one per accepted-prefix size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcCurve {
    pub points: Vec<(f64, f64)>,
}

impl crate::io::Artifact for RcCurve {
    const KIND: &'static str = "rc-curve";
}

impl RcCurve {
    /// Two whitespace-separated columns, one point per line.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.points.len() * 24);
        for (c, r) in &self.points {
            out.push_str(&format!("{c} {r}\n"));
        }
        out
    }
}

pub fn rc_curve(conf: &ConfidenceVector, losses: &LossVector) -> Result<RcCurve> {
    check_lengths(conf, losses)?;
    let n = conf.len();
    let l = losses.as_slice();
    let mut cum = 0usize;
    let points = rank_order(conf)
        .into_iter()
        .enumerate()
        .map(|(j, i)| {
            let k = j + 1;
            cum += l[i] as usize;
            (k as f64 / n as f64, cum as f64 / k as f64)
        })
        .collect();
    Ok(RcCurve { points })
}

/// AURC of a sorted key sequence.
fn aurc_of_keys(keys: &[u128], losses: &[u8]) -> f64 {
    let mut cum = 0usize;
    let mut total = 0.0;
    for (j, &key) in keys.iter().enumerate() {
        cum += losses[key as u64 as usize] as usize;
        total += cum as f64 / (j + 1) as f64;
    }
    total / keys.len() as f64
}

/// AURC of raw scores, reusing `keys` as sort scratch. Used by the tuners so
/// that candidate evaluation matches [`aurc`] bit for bit.
pub(crate) fn aurc_scores(scores: &[f64], losses: &[u8], keys: &mut Vec<u128>) -> f64 {
    sorted_keys(scores, keys);
    aurc_of_keys(keys, losses)
}

pub fn aurc(conf: &ConfidenceVector, losses: &LossVector) -> Result<f64> {
    check_lengths(conf, losses)?;
    let mut keys = Vec::with_capacity(conf.len());
    Ok(aurc_scores(conf.as_slice(), losses.as_slice(), &mut keys))
}

/// AURC of an ordering that accepts every correct sample first.
pub fn oracle_aurc(losses: &LossVector) -> f64 {
    let n = losses.len();
    let e = losses.error_count();
    let mut total = 0.0;
    for k in (n - e + 1)..=n {
        total += (k + e - n) as f64 / k as f64;
    }
    total / n as f64
}

pub fn e_aurc(conf: &ConfidenceVector, losses: &LossVector) -> Result<f64> {
    Ok(aurc(conf, losses)? - oracle_aurc(losses))
}

fn naurc_from_parts(aurc: f64, oracle: f64, losses: &LossVector) -> Result<f64> {
    let e = losses.error_count();
    if e == 0 || e == losses.len() {
        return Err(Error::UndefinedMetric(format!(
            "NAURC needs both correct and incorrect predictions ({e} errors out of {})",
            losses.len()
        )));
    }
    Ok((aurc - oracle) / (losses.risk() - oracle))
}

/// E-AURC normalised by that of a random ranking: 0 is ideal, 1 random.
pub fn naurc(conf: &ConfidenceVector, losses: &LossVector) -> Result<f64> {
    let a = aurc(conf, losses)?;
    naurc_from_parts(a, oracle_aurc(losses), losses)
}

/// Probability that a correct sample outscores an incorrect one, ties
/// counted half.
pub fn auroc(conf: &ConfidenceVector, losses: &LossVector) -> Result<f64> {
    check_lengths(conf, losses)?;
    let n_err = losses.error_count() as u128;
    let n_ok = losses.len() as u128 - n_err;
    if n_err == 0 || n_ok == 0 {
        return Err(Error::UndefinedMetric(
            "AUROC needs both correct and incorrect predictions".into(),
        ));
    }
    let scores = conf.as_slice();
    let l = losses.as_slice();
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_unstable_by_key(|&i| order_key(scores[i]));

    // Twice the number of (correct above incorrect) pairs, ties counting 1.
    let mut doubled: u128 = 0;
    let mut errors_below: u128 = 0;
    let mut g = 0;
    while g < idx.len() {
        let key = order_key(scores[idx[g]]);
        let mut ok = 0u128;
        let mut bad = 0u128;
        let mut h = g;
        while h < idx.len() && order_key(scores[idx[h]]) == key {
            if l[idx[h]] == 1 {
                bad += 1;
            } else {
                ok += 1;
            }
            h += 1;
        }
        doubled += 2 * ok * errors_below + ok * bad;
        errors_below += bad;
        g = h;
    }
    Ok(doubled as f64 / (2 * n_ok * n_err) as f64)
}

/// Largest coverage whose accepted prefix reaches `target_accuracy`; 0 when
/// no prefix does.
pub fn sac(conf: &ConfidenceVector, losses: &LossVector, target_accuracy: f64) -> Result<f64> {
    check_lengths(conf, losses)?;
    if !(target_accuracy > 0.0 && target_accuracy <= 1.0) {
        return Err(Error::param(format!(
            "target accuracy must be in (0, 1], got {target_accuracy}"
        )));
    }
    let n = conf.len();
    let l = losses.as_slice();
    let mut cum = 0usize;
    let mut best = 0;
    for (j, i) in rank_order(conf).into_iter().enumerate() {
        let k = j + 1;
        cum += l[i] as usize;
        if (k - cum) as f64 / k as f64 >= target_accuracy {
            best = k;
        }
    }
    Ok(best as f64 / n as f64)
}

/// `[x]+_eps`: `x` when it exceeds `eps`, else 0.
pub fn positive_part(x: f64, eps: f64) -> f64 {
    if x > eps {
        x
    } else {
        0.0
    }
}

/// Average positive NAURC gain over MSP across a set of models.
pub fn apg(naurc_msp: &[f64], naurc_method: &[f64], eps: f64) -> Result<f64> {
    if naurc_msp.is_empty() {
        return Err(Error::param("APG needs at least one model"));
    }
    if naurc_msp.len() != naurc_method.len() {
        return Err(Error::Dimension {
            what: "method NAURC list vs MSP NAURC list",
            expected: naurc_msp.len(),
            found: naurc_method.len(),
        });
    }
    if !(eps >= 0.0) {
        return Err(Error::param(format!("epsilon must be non-negative, got {eps}")));
    }
    let total: f64 = naurc_msp
        .iter()
        .zip(naurc_method)
        .map(|(m, g)| positive_part(m - g, eps))
        .sum();
    Ok(total / naurc_msp.len() as f64)
}

/// Number of groups of two or more samples sharing a score.
pub fn tie_groups(conf: &ConfidenceVector) -> usize {
    let mut keys: Vec<u64> = conf.as_slice().iter().map(|&s| order_key(s)).collect();
    keys.sort_unstable();
    let mut groups = 0;
    let mut run = 1;
    for w in keys.windows(2) {
        if w[0] == w[1] {
            run += 1;
            if run == 2 {
                groups += 1;
            }
        } else {
            run = 1;
        }
    }
    groups
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SacPoint {
    pub target_accuracy: f64,
    pub coverage: f64,
}

/// Every metric for one estimator on one dataset. NAURC and AUROC are
/// `None` when the losses are all 0 or all 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub samples: usize,
    pub errors: usize,
    pub accuracy: f64,
    pub risk: f64,
    pub aurc: f64,
    pub oracle_aurc: f64,
    pub e_aurc: f64,
    #[serde(with = "crate::io::undefined")]
    pub naurc: Option<f64>,
    #[serde(with = "crate::io::undefined")]
    pub auroc: Option<f64>,
    pub sac: Vec<SacPoint>,
    pub tie_groups: usize,
}

impl crate::io::Artifact for MetricReport {
    const KIND: &'static str = "metric-report";
}

impl MetricReport {
    pub fn evaluate(
        conf: &ConfidenceVector,
        losses: &LossVector,
        sac_targets: &[f64],
    ) -> Result<Self> {
        let aurc = aurc(conf, losses)?;
        let oracle = oracle_aurc(losses);
        let naurc = match naurc_from_parts(aurc, oracle, losses) {
            Ok(v) => Some(v),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        let auroc = match auroc(conf, losses) {
            Ok(v) => Some(v),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        let sac = sac_targets
            .iter()
            .map(|&t| {
                Ok(SacPoint {
                    target_accuracy: t,
                    coverage: sac(conf, losses, t)?,
                })
            })
            .collect::<Result<_>>()?;
        let risk = losses.risk();
        Ok(Self {
            samples: losses.len(),
            errors: losses.error_count(),
            accuracy: 1.0 - risk,
            risk,
            aurc,
            oracle_aurc: oracle,
            e_aurc: aurc - oracle,
            naurc,
            auroc,
            sac,
            tie_groups: tie_groups(conf),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conf(v: &[f64]) -> ConfidenceVector {
        ConfidenceVector::new(v.to_vec()).unwrap()
    }

    fn losses(v: &[u8]) -> LossVector {
        LossVector::from_errors(v.iter().map(|&x| x == 1))
    }

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() <= 1e-15, "{a} vs {b}");
    }

    const FOUR_CONF: [f64; 4] = [0.9, 0.8, 0.7, 0.6];
    const FOUR_LOSS: [u8; 4] = [0, 1, 0, 1];

    #[test]
    fn rank_order_examples() {
        assert_eq!(rank_order(&conf(&[0.9, 0.1, 0.5])), vec![0, 2, 1]);
        assert_eq!(rank_order(&conf(&[0.3; 5])), vec![0, 1, 2, 3, 4]);
        assert_eq!(rank_order(&conf(&[1.0, 2.0])), vec![1, 0]);
        assert_eq!(rank_order(&conf(&[-0.0, 0.0, -1.0])), vec![0, 1, 2]);
        assert_eq!(rank_order(&conf(&[-3.0, 2.0, -1.0, f64::MAX])), vec![3, 1, 2, 0]);
    }

    #[test]
    fn rc_curve_examples() {
        let c = rc_curve(&conf(&FOUR_CONF), &losses(&FOUR_LOSS)).unwrap();
        let expected = [(0.25, 0.0), (0.5, 0.5), (0.75, 1.0 / 3.0), (1.0, 0.5)];
        assert_eq!(c.points.len(), 4);
        for (got, want) in c.points.iter().zip(expected) {
            close(got.0, want.0);
            close(got.1, want.1);
        }
        let c = rc_curve(&conf(&[0.3, 0.2]), &losses(&[0, 0])).unwrap();
        assert!(c.points.iter().all(|p| p.1 == 0.0));
        let c = rc_curve(&conf(&[0.3]), &losses(&[1])).unwrap();
        assert_eq!(c.points, vec![(1.0, 1.0)]);
        assert_eq!(
            rc_curve(&conf(&FOUR_CONF), &losses(&FOUR_LOSS)).unwrap().to_text(),
            "0.25 0\n0.5 0.5\n0.75 0.3333333333333333\n1 0.5\n"
        );
        assert!(rc_curve(&conf(&[0.1]), &losses(&[0, 1])).is_err());
    }

    #[test]
    fn aurc_examples() {
        close(aurc(&conf(&FOUR_CONF), &losses(&FOUR_LOSS)).unwrap(), 1.0 / 3.0);
        assert_eq!(aurc(&conf(&[0.5, 0.1, 0.2]), &losses(&[0, 0, 0])).unwrap(), 0.0);
        assert_eq!(aurc(&conf(&[0.5, 0.1, 0.2]), &losses(&[1, 1, 1])).unwrap(), 1.0);
    }

    #[test]
    fn oracle_examples() {
        close(oracle_aurc(&losses(&FOUR_LOSS)), 5.0 / 24.0);
        assert_eq!(oracle_aurc(&losses(&[0, 0, 0])), 0.0);
        assert_eq!(oracle_aurc(&losses(&[1, 1, 1])), 1.0);
    }

    #[test]
    fn naurc_examples() {
        close(naurc(&conf(&FOUR_CONF), &losses(&FOUR_LOSS)).unwrap(), 3.0 / 7.0);
        assert_eq!(naurc(&conf(&[0.9, 0.1, 0.8, 0.2]), &losses(&FOUR_LOSS)).unwrap(), 0.0);
        assert!(matches!(
            naurc(&conf(&[0.1, 0.2]), &losses(&[0, 0])),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(
            naurc(&conf(&[0.1, 0.2]), &losses(&[1, 1])),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn e_aurc_examples() {
        close(e_aurc(&conf(&FOUR_CONF), &losses(&FOUR_LOSS)).unwrap(), 1.0 / 8.0);
        assert_eq!(e_aurc(&conf(&[0.9, 0.1, 0.8, 0.2]), &losses(&FOUR_LOSS)).unwrap(), 0.0);
        // Error ranked first: risks (1, 1/2).
        let l = losses(&[0, 1]);
        let c = conf(&[0.1, 0.9]);
        close(aurc(&c, &l).unwrap(), 0.75);
        close(oracle_aurc(&l), 0.25);
        close(e_aurc(&c, &l).unwrap(), 0.5);
    }

    #[test]
    fn auroc_examples() {
        close(auroc(&conf(&FOUR_CONF), &losses(&FOUR_LOSS)).unwrap(), 0.75);
        assert_eq!(auroc(&conf(&[0.9, 0.1, 0.8, 0.2]), &losses(&FOUR_LOSS)).unwrap(), 1.0);
        assert_eq!(auroc(&conf(&[0.4; 4]), &losses(&FOUR_LOSS)).unwrap(), 0.5);
        assert!(matches!(
            auroc(&conf(&[0.1, 0.2]), &losses(&[0, 0])),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn sac_examples() {
        let (c, l) = (conf(&FOUR_CONF), losses(&FOUR_LOSS));
        assert_eq!(sac(&c, &l, 1.0).unwrap(), 0.25);
        assert_eq!(sac(&c, &l, 0.5).unwrap(), 1.0);
        assert_eq!(sac(&c, &l, 0.4).unwrap(), 1.0);
        assert_eq!(sac(&conf(&[0.1, 0.2]), &losses(&[1, 1]), 0.5).unwrap(), 0.0);
        assert!(sac(&c, &l, 0.0).is_err());
    }

    #[test]
    fn apg_examples() {
        let got = apg(&[0.5, 0.5, 0.5], &[0.48, 0.495, 0.53], 0.01).unwrap();
        assert!((got - 0.02 / 3.0).abs() < 1e-12, "{got}");
        assert_eq!(apg(&[0.3, 0.2], &[0.3, 0.2], 0.01).unwrap(), 0.0);
        assert!((apg(&[0.44], &[0.17], 0.01).unwrap() - 0.27).abs() < 1e-12);
        assert!(apg(&[], &[], 0.01).is_err());
        assert!(apg(&[0.1], &[0.1, 0.2], 0.01).is_err());
    }

    #[test]
    fn report_handles_undefined_metrics() {
        let r = MetricReport::evaluate(&conf(&[0.3, 0.9]), &losses(&[0, 0]), &[0.9]).unwrap();
        assert_eq!(r.naurc, None);
        assert_eq!(r.auroc, None);
        assert_eq!(r.aurc, 0.0);
        assert_eq!(r.sac[0].coverage, 1.0);
    }

    #[test]
    fn tie_group_count() {
        assert_eq!(tie_groups(&conf(&[0.1, 0.1, 0.2, 0.3, 0.3, 0.3])), 2);
        assert_eq!(tie_groups(&conf(&[0.1, 0.2])), 0);
        assert_eq!(tie_groups(&conf(&[0.0, -0.0])), 1);
    }
}
