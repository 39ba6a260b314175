//! Tuning/test splits from a counter-based generator.
//!
//! The generator is ChaCha8 keyed with the little-endian seed and using the
//! repetition index as its stream id; indices are drawn with a partial
//! Fisher-Yates shuffle and an unbiased multiply-and-reject bound, so a
//! split depends only on `(N, tuning_size, seed, repetition)`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deterministic generator for `(seed, stream)`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Uniform integer in `[0, range)`.
fn bounded(rng: &mut impl RngCore, range: u64) -> u64 {
    debug_assert!(range > 0);
    let threshold = range.wrapping_neg() % range;
    loop {
        let m = rng.next_u64() as u128 * range as u128;
        if (m as u64) >= threshold {
            return (m >> 64) as u64;
        }
    }
}

/// `k` distinct indices from `0..n`, sorted ascending.
pub fn subsample(n: usize, k: usize, seed: u64, stream: u64) -> Result<Vec<usize>> {
    if k > n {
        return Err(Error::param(format!("cannot draw {k} samples from {n}")));
    }
    let mut rng = seeded_rng(seed, stream);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + bounded(&mut rng, (n - i) as u64) as usize;
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx.sort_unstable();
    Ok(idx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub tuning_size: usize,
    pub seed: u64,
    pub repetitions: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            tuning_size: 5000,
            seed: 0,
            repetitions: 10,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.tuning_size == 0 || self.tuning_size >= n {
            return Err(Error::param(format!(
                "tuning size must be in (0, {n}), got {}",
                self.tuning_size
            )));
        }
        if self.repetitions == 0 {
            return Err(Error::param("at least one repetition is required"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    /// Sorted ascending.
    pub tuning: Vec<usize>,
    /// Sorted ascending; the complement of `tuning`.
    pub test: Vec<usize>,
}

pub fn split(n: usize, spec: &SplitSpec, repetition: usize) -> Result<Split> {
    spec.validate(n)?;
    if repetition >= spec.repetitions {
        return Err(Error::param(format!(
            "repetition {repetition} out of range for {} repetitions",
            spec.repetitions
        )));
    }
    let tuning = subsample(n, spec.tuning_size, spec.seed, repetition as u64)?;
    let mut in_tuning = vec![false; n];
    for &i in &tuning {
        in_tuning[i] = true;
    }
    let test = (0..n).filter(|&i| !in_tuning[i]).collect();
    Ok(Split { tuning, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_a_partition() {
        let spec = SplitSpec {
            tuning_size: 3,
            seed: 7,
            repetitions: 2,
        };
        let s = split(10, &spec, 0).unwrap();
        assert_eq!(s.tuning.len(), 3);
        assert_eq!(s.test.len(), 7);
        let mut all: Vec<usize> = s.tuning.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_deterministic_and_varies_by_repetition() {
        let spec = SplitSpec {
            tuning_size: 20,
            seed: 0,
            repetitions: 2,
        };
        assert_eq!(split(100, &spec, 0).unwrap(), split(100, &spec, 0).unwrap());
        assert_ne!(split(100, &spec, 0).unwrap(), split(100, &spec, 1).unwrap());
    }

    #[test]
    fn split_rejects_bad_sizes() {
        let spec = |t| SplitSpec {
            tuning_size: t,
            seed: 0,
            repetitions: 1,
        };
        assert!(split(10, &spec(10), 0).is_err());
        assert!(split(10, &spec(0), 0).is_err());
        assert!(split(10, &spec(3), 1).is_err());
    }

    #[test]
    fn bounded_is_roughly_uniform() {
        let mut rng = seeded_rng(3, 0);
        let mut counts = [0usize; 6];
        for _ in 0..60_000 {
            counts[bounded(&mut rng, 6) as usize] += 1;
        }
        for c in counts {
            assert!((9_500..10_500).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn full_subsample_is_identity() {
        assert_eq!(subsample(5, 5, 1, 9).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(subsample(5, 6, 1, 9).is_err());
    }
}
