mod common;

use common::{basis, preset};
use proptest::prelude::*;
use qsol_core::quadrature::{build_grid, integrate_log, AxisMap, GridOptions, QuadratureGrid};
use qsol_core::quantization::Potential;

#[test]
fn round_and_vertex_volumes_match_closed_forms() {
    let b = basis("CP1", 1);
    // ∫ (2cosh x)^{-2} dx = 1/2.
    let vertex = Potential::vertex_log_sum_exp(&preset("CP1"));
    let g = build_grid(&vertex, &b, &GridOptions::default()).unwrap();
    let v = integrate_log(&g, |x| -2.0 * vertex.value(x));
    assert!((v - 0.5f64.ln()).abs() < 1e-10);
    // ∫ (2cosh(x/2))^{-4} dx = 1/6.
    let round = Potential::round_cp1();
    let g = build_grid(&round, &b, &GridOptions::default()).unwrap();
    let v = integrate_log(&g, |x| -2.0 * common::round_value(x[0]));
    assert!((v - (1.0f64 / 6.0).ln()).abs() < 1e-10);
}

#[test]
fn doubling_a_converged_grid_changes_moments_below_tolerance() {
    let poly = preset("dP8");
    let phi = Potential::vertex_log_sum_exp(&poly);
    let b = basis("dP8", 3);
    let opts = GridOptions::default();
    let g = build_grid(&phi, &b, &opts).unwrap();
    assert!(g.error_estimate() <= opts.tol);
    let fine = g.refined();
    for a in 0..b.len() {
        let alpha = b.point_f64(a).to_vec();
        let f = |x: &[f64]| alpha[0] * x[0] + alpha[1] * x[1] - 4.0 * phi.value(x);
        let (c, d) = (integrate_log(&g, f), integrate_log(&fine, f));
        assert!((c - d).abs() <= opts.tol, "α={alpha:?}: {c} vs {d}");
    }
    assert!(g.log_weights().iter().all(|w| w.is_finite()));
}

#[test]
fn error_estimates_shrink_under_refinement() {
    let phi = Potential::round_cp1();
    let opts = GridOptions {
        tol: 1e-14,
        ..Default::default()
    };
    let g = build_grid(&phi, &basis("CP1", 6), &opts).unwrap();
    let h = g.error_history();
    assert!(h.len() >= 2);
    assert!(h.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn gaussian_and_exact_polynomial_rules() {
    let g = QuadratureGrid::tensor(2, -9.0, 9.0, 96, AxisMap::Affine);
    let v = integrate_log(&g, |x| -x[0] * x[0] - x[1] * x[1]);
    assert!((v - std::f64::consts::PI.ln()).abs() < 1e-13);
    let g = QuadratureGrid::tensor(1, 0.0, 2.0, 6, AxisMap::Affine);
    // ∫_0^2 x^11 dx = 2^12/12.
    let v = integrate_log(&g, |x| 11.0 * x[0].ln());
    assert!((v - (4096.0f64 / 12.0).ln()).abs() < 1e-13);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn translation_invariance(delta in -3.0f64..3.0, a in -0.9f64..0.9) {
        let g = QuadratureGrid::tensor(1, -40.0, 40.0, 256, AxisMap::SinhMidpoint { center: 0.0, scale: 1.0 });
        let shifted = g.translated(delta);
        let f = |x: f64| a * x - 2.0 * common::round_value(x);
        let u = integrate_log(&g, |x| f(x[0]));
        let v = integrate_log(&shifted, |x| f(x[0] - delta));
        prop_assert!((u - v).abs() < 1e-12);
    }

    #[test]
    fn constant_offset_is_exact(c in -500.0f64..500.0) {
        let g = QuadratureGrid::tensor(2, -6.0, 6.0, 24, AxisMap::Sinh { center: 0.5, scale: 2.0 });
        let u = integrate_log(&g, |x| -(x[0] * x[0] + 0.5 * x[1] * x[1]));
        let v = integrate_log(&g, |x| c - (x[0] * x[0] + 0.5 * x[1] * x[1]));
        prop_assert!((v - u - c).abs() <= 1e-12 * c.abs().max(1.0));
        prop_assert!(u.is_finite());
    }
}
