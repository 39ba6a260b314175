//! Softmax reductions over max-centred logit rows.
//!
//! Every softmax-derived score in the crate (MSP, softmax margin, entropy,
//! Gini, NLL) is computed from the three sums returned by
//! [`softmax_sums`], so a score evaluated inside a grid search is bitwise
//! identical to the same score evaluated by `apply_estimator`.
//!
//! The exponential reduces `x = (32k + j) ln2/32 + r` with `|r| <= ln2/64`,
//! looks `2^(j/32)` up in a table and finishes with a degree-6 polynomial.
//! It uses plain multiplies and adds so that the compiler can vectorise it
//! and so that results do not depend on FMA availability. Relative error is
//! below 5e-16 on `[-708, 0]`.
//!
//! On x86-64 the row reductions are compiled a second and third time with
//! AVX2 and AVX-512 enabled and picked at runtime. FMA stays disabled, so
//! every variant performs the same IEEE operations in the same order.

const LANES: usize = 16;

const INV_STEP: f64 = 32.0 * std::f64::consts::LOG2_E;
// ln2/32 split so that `n * STEP_HI` is exact for the reachable `n`.
const STEP_HI: f64 = f64::from_bits(0x3fe6_2e42_fee0_0000) / 32.0;
const STEP_LO: f64 = f64::from_bits(0x3dea_39ef_3579_3c76) / 32.0;
// 1.5 * 2^52: adding and subtracting rounds to the nearest integer.
const ROUND_SHIFT: f64 = 6_755_399_441_055_744.0;
const UNDERFLOW: f64 = -708.0;

/// Bit patterns of `2^(j/32)`, correctly rounded.
const POW2_FRAC: [u64; 32] = [
    0x3ff0000000000000,
    0x3ff059b0d3158574,
    0x3ff0b5586cf9890f,
    0x3ff11301d0125b51,
    0x3ff172b83c7d517b,
    0x3ff1d4873168b9aa,
    0x3ff2387a6e756238,
    0x3ff29e9df51fdee1,
    0x3ff306fe0a31b715,
    0x3ff371a7373aa9cb,
    0x3ff3dea64c123422,
    0x3ff44e086061892d,
    0x3ff4bfdad5362a27,
    0x3ff5342b569d4f82,
    0x3ff5ab07dd485429,
    0x3ff6247eb03a5585,
    0x3ff6a09e667f3bcd,
    0x3ff71f75e8ec5f74,
    0x3ff7a11473eb0187,
    0x3ff82589994cce13,
    0x3ff8ace5422aa0db,
    0x3ff93737b0cdc5e5,
    0x3ff9c49182a3f090,
    0x3ffa5503b23e255d,
    0x3ffae89f995ad3ad,
    0x3ffb7f76f2fb5e47,
    0x3ffc199bdd85529c,
    0x3ffcb720dcef9069,
    0x3ffd5818dcfba487,
    0x3ffdfc97337b9b5f,
    0x3ffea4afa2a490da,
    0x3fff50765b6e4540,
];

/// `e^x` for `x <= 0`. Inputs below -708 flush to zero.
#[inline(always)]
pub(crate) fn exp_nonpos(x: f64) -> f64 {
    let xc = if x < UNDERFLOW { UNDERFLOW } else { x };
    let y = xc * INV_STEP + ROUND_SHIFT;
    let n = y - ROUND_SHIFT;
    let r = (xc - n * STEP_HI) - n * STEP_LO;

    let mut p = 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    let q = r + (r * r) * p;

    let ni = (y.to_bits() as i64).wrapping_sub(ROUND_SHIFT.to_bits() as i64);
    let frac = POW2_FRAC[(ni & 31) as usize];
    let scale = f64::from_bits(frac.wrapping_add(((ni >> 5) as u64) << 52));
    let v = scale + scale * q;
    if x < UNDERFLOW {
        0.0
    } else {
        v
    }
}

/// Sums over `x_k = d_k * inv_t` of a centred row `d` (max entry 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SoftmaxSums {
    /// `Σ e^{x_k}`, at least 1.
    pub exp: f64,
    /// `Σ x_k e^{x_k}`, at most 0.
    pub weighted: f64,
    /// `Σ e^{2 x_k}`.
    pub squares: f64,
}

impl SoftmaxSums {
    #[inline]
    pub fn msp(&self) -> f64 {
        1.0 / self.exp
    }

    /// `Σ σ_k ln σ_k`.
    #[inline]
    pub fn negative_entropy(&self) -> f64 {
        self.weighted / self.exp - self.exp.ln()
    }

    /// `Σ σ_k² - 1`.
    #[inline]
    pub fn negative_gini(&self) -> f64 {
        self.squares / (self.exp * self.exp) - 1.0
    }

    /// `σ_top - σ_runner_up`, given the runner-up's scaled centred logit.
    #[inline]
    pub fn softmax_margin(&self, runner_up_x: f64) -> f64 {
        (1.0 - exp_nonpos(runner_up_x)) / self.exp
    }
}

/// Pairwise tree sum with a fixed shape.
#[inline]
fn fold(lanes: [f64; LANES]) -> f64 {
    let mut v = lanes;
    let mut width = LANES;
    while width > 1 {
        width /= 2;
        for j in 0..width {
            v[j] = v[2 * j] + v[2 * j + 1];
        }
    }
    v[0]
}

#[derive(Clone, Copy)]
enum Isa {
    Base,
    #[cfg(target_arch = "x86_64")]
    Avx2,
    #[cfg(target_arch = "x86_64")]
    Avx512,
}

fn isa() -> Isa {
    use std::sync::OnceLock;
    static ISA: OnceLock<Isa> = OnceLock::new();
    *ISA.get_or_init(|| {
        #[cfg(target_arch = "x86_64")]
        {
            if std::is_x86_feature_detected!("avx512f") {
                return Isa::Avx512;
            }
            if std::is_x86_feature_detected!("avx2") {
                return Isa::Avx2;
            }
        }
        Isa::Base
    })
}

macro_rules! dispatch {
    ($name:ident, $generic:ident, $ret:ty) => {
        pub(crate) fn $name(d: &[f64], inv_t: f64) -> $ret {
            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx2")]
                fn avx2(d: &[f64], inv_t: f64) -> $ret {
                    $generic(d, inv_t)
                }
                #[target_feature(enable = "avx512f")]
                fn avx512(d: &[f64], inv_t: f64) -> $ret {
                    $generic(d, inv_t)
                }
                match isa() {
                    // SAFETY: the features were detected at runtime.
                    Isa::Avx512 => return unsafe { avx512(d, inv_t) },
                    Isa::Avx2 => return unsafe { avx2(d, inv_t) },
                    Isa::Base => {}
                }
            }
            $generic(d, inv_t)
        }
    };
}

dispatch!(softmax_sums, softmax_sums_generic, SoftmaxSums);
dispatch!(sum_exp, sum_exp_generic, f64);

/// Padding for the last partial chunk; contributes exact zeros to every sum.
const PAD: f64 = -1000.0;

/// Scaled values of the final partial chunk, padded to a full lane set.
#[inline(always)]
fn tail(rem: &[f64], inv_t: f64) -> [f64; LANES] {
    let mut x = [PAD; LANES];
    for (o, &v) in x.iter_mut().zip(rem) {
        *o = v * inv_t;
    }
    x
}

#[inline(always)]
fn softmax_sums_generic(d: &[f64], inv_t: f64) -> SoftmaxSums {
    let mut s = [0.0; LANES];
    let mut a = [0.0; LANES];
    let mut g = [0.0; LANES];
    let mut add = |x: [f64; LANES]| {
        for j in 0..LANES {
            let e = exp_nonpos(x[j]);
            s[j] += e;
            a[j] += e * x[j];
            g[j] += e * e;
        }
    };
    let chunks = d.chunks_exact(LANES);
    let rem = chunks.remainder();
    for ch in chunks {
        add(std::array::from_fn(|j| ch[j] * inv_t));
    }
    if !rem.is_empty() {
        add(tail(rem, inv_t));
    }
    SoftmaxSums {
        exp: fold(s),
        weighted: fold(a),
        squares: fold(g),
    }
}

/// `Σ e^{d_k * inv_t}` alone; bitwise equal to `softmax_sums(d, inv_t).exp`.
#[inline(always)]
fn sum_exp_generic(d: &[f64], inv_t: f64) -> f64 {
    let mut s = [0.0; LANES];
    let mut add = |x: [f64; LANES]| {
        for j in 0..LANES {
            s[j] += exp_nonpos(x[j]);
        }
    };
    let chunks = d.chunks_exact(LANES);
    let rem = chunks.remainder();
    for ch in chunks {
        add(std::array::from_fn(|j| ch[j] * inv_t));
    }
    if !rem.is_empty() {
        add(tail(rem, inv_t));
    }
    fold(s)
}

/// Index of the largest entry (lowest index on ties) and of the runner-up
/// (largest among the rest, again lowest index on ties). `row.len() >= 2`.
#[inline]
pub(crate) fn top_two(row: &[f64]) -> (usize, usize) {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    let mut second = if best == 0 { 1 } else { 0 };
    for (k, &v) in row.iter().enumerate() {
        if k != best && v > row[second] {
            second = k;
        }
    }
    (best, second)
}

/// Writes `row - row[top]` into `out`.
#[inline]
pub(crate) fn center_into(row: &[f64], top: usize, out: &mut [f64]) {
    let m = row[top];
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v - m;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_matches_std_to_a_few_ulp() {
        let mut worst: f64 = 0.0;
        for i in 0..200_000 {
            let x = -(i as f64) * 0.003_5;
            let want = x.exp();
            let got = exp_nonpos(x);
            if want > 1e-300 {
                worst = worst.max(((got - want) / want).abs());
            }
        }
        assert!(worst < 5e-16, "worst relative error {worst:e}");
        assert_eq!(exp_nonpos(0.0), 1.0);
        assert_eq!(exp_nonpos(-0.0), 1.0);
        assert_eq!(exp_nonpos(-1e4), 0.0);
        assert_eq!(exp_nonpos(f64::NEG_INFINITY), 0.0);
    }

    #[test]
    fn sum_exp_agrees_with_full_sums() {
        let d: Vec<f64> = (0..37).map(|k| -(k as f64) * 0.37).collect();
        for inv_t in [0.1, 1.0, 3.3, 100.0] {
            assert_eq!(sum_exp(&d, inv_t), softmax_sums(&d, inv_t).exp);
        }
    }

    #[test]
    fn dispatched_kernels_match_baseline() {
        let d: Vec<f64> = (0..1003).map(|k| -((k * 7919 % 1000) as f64) * 0.013).collect();
        for inv_t in [0.01, 0.7, 1.0, 2.5, 100.0] {
            assert_eq!(softmax_sums(&d, inv_t), softmax_sums_generic(&d, inv_t));
            assert_eq!(sum_exp(&d, inv_t), sum_exp_generic(&d, inv_t));
        }
    }

    #[test]
    fn top_two_breaks_ties_toward_lower_index() {
        assert_eq!(top_two(&[5.0, 5.0, 1.0]), (0, 1));
        assert_eq!(top_two(&[1.0, 3.0, 3.0]), (1, 2));
        assert_eq!(top_two(&[-2.0, -1.0]), (1, 0));
        assert_eq!(top_two(&[0.0, 0.0, 0.0, 0.0]), (0, 1));
    }
}
