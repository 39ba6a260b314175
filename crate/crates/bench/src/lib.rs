//! Fixtures shared by the benchmarks.

use selclass::io::{generate_synthetic, Distortion, SyntheticModelSpec};
use selclass::{ConfidenceVector, Dataset, LossVector};

/// Norm-inflated synthetic model with the given shape.
pub fn model(samples: usize, classes: usize, seed: u64) -> Dataset {
    generate_synthetic(&SyntheticModelSpec {
        samples,
        classes,
        accuracy: 0.75,
        distortion: Distortion::NormInflation,
        seed,
        ..Default::default()
    })
    .expect("valid synthetic spec")
}

/// Pseudo-random scores and a loss pattern with roughly 25% errors.
pub fn scores(samples: usize, seed: u64) -> (ConfidenceVector, LossVector) {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let conf = (0..samples).map(|_| (next() >> 11) as f64 / (1u64 << 53) as f64).collect();
    let losses = LossVector::from_errors((0..samples).map(|_| next() % 4 == 0));
    (ConfidenceVector::new(conf).expect("finite"), losses)
}
