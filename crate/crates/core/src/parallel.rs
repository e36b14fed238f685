//! Deterministic parallel helpers. Without `std` everything runs serially.

use alloc::vec::Vec;

use crate::math::pairwise_sum;

/// Ranges at least this long are split across threads in [`sum_indexed`].
const PAR_SPLIT: usize = 1 << 14;

/// Evaluates `f(i)` for `i` in `0..n` and returns the results in index order.
///
/// Each `f(i)` runs serially, so the output is identical for any thread
/// count.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "std")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "std"))]
    {
        (0..n).map(f).collect()
    }
}

/// Pairwise sum of `term(i)` over `0..n`, using the same reduction tree as
/// [`pairwise_sum`] but evaluating large subtrees on separate threads.
pub fn sum_indexed<F>(n: usize, term: &F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    sum_range(0, n, term)
}

fn sum_range<F>(lo: usize, hi: usize, term: &F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    if hi - lo < PAR_SPLIT {
        return pairwise_sum(lo, hi, term);
    }
    let mid = lo + (hi - lo) / 2;
    #[cfg(feature = "std")]
    let (a, b) = rayon::join(|| sum_range(lo, mid, term), || sum_range(mid, hi, term));
    #[cfg(not(feature = "std"))]
    let (a, b) = (sum_range(lo, mid, term), sum_range(mid, hi, term));
    a + b
}

/// Maximum of `f(i)` over `0..n` (`-inf` when empty).
pub fn max_indexed<F>(n: usize, f: &F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    #[cfg(feature = "std")]
    {
        use rayon::prelude::*;
        (0..n)
            .into_par_iter()
            .map(f)
            .reduce(|| f64::NEG_INFINITY, f64::max)
    }
    #[cfg(not(feature = "std"))]
    {
        (0..n).map(f).fold(f64::NEG_INFINITY, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_sum_equals_serial_tree() {
        let n = 100_003;
        let f = |i: usize| 1.0 / (1.0 + i as f64);
        assert_eq!(
            sum_indexed(n, &f).to_bits(),
            pairwise_sum(0, n, &f).to_bits()
        );
    }
}
