//! Scalar helpers shared by every numerical module.
//!
//! Transcendental functions go through `libm` so that results do not depend
//! on the platform math library.

pub use libm::{asinh, atanh, cosh, exp, expm1, fabs, floor, log, log1p, pow, sinh, sqrt, tanh};

use alloc::vec::Vec;

/// `ln(2π)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Exponents further than this below the running maximum are dropped from
/// log-domain sums. `e^-60 ≈ 9e-27`, far below any tolerance used here.
pub const LOG_PRUNE: f64 = 60.0;

/// Leaf size of the pairwise summation tree.
const PAIRWISE_LEAF: usize = 32;

/// Pairwise (cascade) summation of `term(i)` for `i` in `lo..hi`.
///
/// The reduction tree depends only on the range, never on scheduling, so the
/// result is bit-for-bit reproducible.
pub fn pairwise_sum<F: Fn(usize) -> f64>(lo: usize, hi: usize, term: &F) -> f64 {
    if hi - lo <= PAIRWISE_LEAF {
        let mut s = 0.0;
        for i in lo..hi {
            s += term(i);
        }
        return s;
    }
    let mid = lo + (hi - lo) / 2;
    pairwise_sum(lo, mid, term) + pairwise_sum(mid, hi, term)
}

/// Pairwise summation over a slice.
pub fn pairwise_sum_slice(values: &[f64]) -> f64 {
    pairwise_sum(0, values.len(), &|i| values[i])
}

/// `ln Σ exp(v_i)`, stable against overflow. Returns `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s = pairwise_sum(0, values.len(), &|i| exp(values[i] - m));
    m + log(s)
}

/// Numerically stable softmax of `values`, written into `out`.
/// Returns the log-normaliser `ln Σ exp(v_i)`.
pub fn softmax_into(values: &[f64], out: &mut Vec<f64>) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.clear();
    out.extend(values.iter().map(|&v| exp(v - m)));
    let s = pairwise_sum_slice(out);
    for w in out.iter_mut() {
        *w /= s;
    }
    m + log(s)
}

/// A real number stored as `mantissa · e^shift`.
///
/// Used for integrals whose magnitude is far outside `f64` range; the
/// mantissa may be negative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scaled {
    pub shift: f64,
    pub mantissa: f64,
}

impl Scaled {
    /// Natural log of the (positive) value.
    pub fn ln(&self) -> f64 {
        self.shift + log(self.mantissa)
    }

    /// The value itself; may overflow for large shifts.
    pub fn value(&self) -> f64 {
        self.mantissa * exp(self.shift)
    }

    /// `self / other`, computed without leaving the log domain.
    pub fn ratio(&self, other: &Scaled) -> f64 {
        self.mantissa / other.mantissa * exp(self.shift - other.shift)
    }
}

/// `ln C(n, k)` via `lgamma`.
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    let (n, k) = (n as f64, k as f64);
    libm::lgamma(n + 1.0) - libm::lgamma(k + 1.0) - libm::lgamma(n - k + 1.0)
}

/// `ln(2 cosh(x))`, accurate for all `x`.
pub fn ln_2cosh(x: f64) -> f64 {
    let a = fabs(x);
    a + log1p(exp(-2.0 * a))
}

/// Ordinary least-squares slope of `ln y` against `ln x`.
///
/// Returns `None` when fewer than two usable points remain after dropping
/// non-positive or non-finite entries.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (log(*x), log(*y)))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_handles_huge_exponents() {
        let v = [1000.0, 1000.0];
        assert!((log_sum_exp(&v) - (1000.0 + core::f64::consts::LN_2)).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn ln_2cosh_matches_direct_formula() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 5.0] {
            let direct = log(2.0 * cosh(x));
            assert!((ln_2cosh(x) - direct).abs() < 1e-14);
        }
        assert!((ln_2cosh(800.0) - 800.0).abs() < 1e-12);
    }

    #[test]
    fn ln_binomial_small_values() {
        assert!((exp(ln_binomial(10, 3)) - 120.0).abs() < 1e-9);
        assert!(ln_binomial(7, 0).abs() < 1e-12);
    }

    #[test]
    fn slope_of_power_law() {
        let xs: Vec<f64> = (1..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * pow(*x, -1.5)).collect();
        assert!((loglog_slope(&xs, &ys).unwrap() + 1.5).abs() < 1e-12);
    }

    #[test]
    fn pairwise_matches_exact_integers() {
        let s = pairwise_sum(0, 1000, &|i| i as f64);
        assert_eq!(s, 499_500.0);
    }
}
