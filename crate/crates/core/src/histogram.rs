//! Equal-width histograms of confidence scores, exported as tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Artifact;
use crate::types::ConfidenceVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: Vec<HistogramBin>,
}

impl Artifact for Histogram {
    const KIND: &'static str = "histogram";
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// Tab-separated `lower upper count` rows with a header line.
    pub fn to_text(&self) -> String {
        let mut out = String::from("lower\tupper\tcount\n");
        for b in &self.bins {
            let _ = writeln!(out, "{}\t{}\t{}", b.lower, b.upper, b.count);
        }
        out
    }
}

/// `bins` equal-width bins spanning `[min, max]` of the scores. The last
/// bin is closed on the right. Constant scores fill the first bin.
pub fn export_confidence_histogram(conf: &ConfidenceVector, bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::param("histogram needs at least one bin"));
    }
    let scores = conf.as_slice();
    if scores.is_empty() {
        return Err(Error::param("histogram of an empty score vector"));
    }
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &s in scores {
        let k = if width > 0.0 {
            (((s - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[k] += 1;
    }
    let edge = |k: usize| if k == bins { hi } else { lo + width * k as f64 };
    Ok(Histogram {
        bins: counts
            .into_iter()
            .enumerate()
            .map(|(k, count)| HistogramBin {
                lower: edge(k),
                upper: edge(k + 1),
                count,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn conf(v: Vec<f64>) -> ConfidenceVector {
        ConfidenceVector::new(v).unwrap()
    }

    #[test]
    fn constant_scores_fill_one_bin() {
        let h = export_confidence_histogram(&conf(vec![0.3; 17]), 5).unwrap();
        assert_eq!(h.bins.iter().filter(|b| b.count > 0).count(), 1);
        assert_eq!(h.total(), 17);
    }

    #[test]
    fn one_bin_per_sample_conserves_mass() {
        let v: Vec<f64> = (0..50).map(|i| (i as f64).sqrt()).collect();
        let h = export_confidence_histogram(&conf(v), 50).unwrap();
        assert_eq!(h.total(), 50);
        assert!(h.bins.iter().all(|b| b.count <= 2));
    }

    #[test]
    fn uniform_scores_are_flat() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let v: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let h = export_confidence_histogram(&conf(v), 10).unwrap();
        // Binomial(10000, 0.1): sd = 30; bin edges come from the sample range.
        for b in &h.bins {
            assert!((b.count as f64 - 1000.0).abs() < 150.0, "{b:?}");
        }
    }

    #[test]
    fn zero_bins_is_an_error() {
        assert!(export_confidence_histogram(&conf(vec![1.0]), 0).is_err());
    }
}
