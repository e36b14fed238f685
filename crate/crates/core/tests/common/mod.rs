//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use qsol_core::quadrature::{build_grid, GridOptions, QuadratureGrid};
use qsol_core::quantization::{gram, InvariantProduct, Potential};
use qsol_core::toric::{lattice_points, ReflexivePolytope, SectionBasis};

pub fn preset(name: &str) -> ReflexivePolytope {
    ReflexivePolytope::preset(name).unwrap()
}

pub fn basis(name: &str, p: u32) -> Arc<SectionBasis> {
    Arc::new(lattice_points(&preset(name), p).unwrap())
}

/// Gram product of `phi` at level `p` together with the grid it was built on.
pub fn gram_on_own_grid(
    phi: &Potential,
    basis: &Arc<SectionBasis>,
) -> (InvariantProduct, QuadratureGrid) {
    let grid = build_grid(phi, basis, &GridOptions::default()).unwrap();
    (gram(phi, basis, &grid).unwrap(), grid)
}

/// The round potential of the projective line, `2 ln(2 cosh(x/2))`.
pub fn round_value(x: f64) -> f64 {
    2.0 * (2.0 * (x / 2.0).cosh()).ln()
}

/// Channel eigenvalue of the round line: `Π_{j<k} (m-j) / Π_{2≤j≤k+1} (m+j)`, `m = 2p`.
pub fn round_gamma(p: u32, k: usize) -> f64 {
    let m = 2.0 * p as f64;
    let mut v = 1.0;
    for j in 0..k {
        v *= (m - j as f64) / (m + j as f64 + 2.0);
    }
    v
}

/// Composite Simpson rule on `[a, b]` with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// `∫_P u₁ e^{t(u₁+u₂)} du` on the degree-8 del Pezzo polygon
/// `{u₁ ≥ -1, u₂ ≥ -1, -1 ≤ u₁+u₂ ≤ 1}`, reduced to one variable `s = u₁+u₂`.
pub fn dp8_first_moment(t: f64) -> f64 {
    simpson(|s| (t * s).exp() * (s * s + 2.0 * s) / 2.0, -1.0, 1.0, 4000)
}

/// Root of [`dp8_first_moment`] by bisection.
pub fn dp8_soliton_root() -> f64 {
    let (mut lo, mut hi) = (-2.0, 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dp8_first_moment(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fitted_order(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}
