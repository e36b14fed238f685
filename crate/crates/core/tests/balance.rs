mod common;

use std::sync::Arc;

use common::{basis, gram_on_own_grid, preset};
use proptest::prelude::*;
use qsol_core::balance::{
    balanced_residual, compare_to_soliton, energy, moment_map, run_flow, soliton_residual, t_step,
    BalanceConfig, FlowMode, InitialProduct,
};
use qsol_core::quadrature::{build_grid, GridOptions, QuadratureGrid};
use qsol_core::quantization::{fs_potential, gram, twist_product, InvariantProduct, Potential};
use qsol_core::soliton::{quantized_futaki, solve_xi_p};
use qsol_core::toric::SectionBasis;

const QUAD_TOL: f64 = 1e-10;

fn product(b: &Arc<SectionBasis>, seed: u64, amplitude: f64) -> InvariantProduct {
    let lw = (0..b.len())
        .map(|i| amplitude * ((i as f64 + 1.0) * (seed as f64 * 0.61 + 1.3)).sin())
        .collect();
    InvariantProduct::new(b.clone(), lw).unwrap()
}

fn own_grid(h: &InvariantProduct) -> QuadratureGrid {
    build_grid(&fs_potential(h), h.basis(), &GridOptions::default()).unwrap()
}

fn relative_moment(h: &InvariantProduct, xi: &[f64], grid: &QuadratureGrid) -> f64 {
    let m = moment_map(h, xi, grid).unwrap();
    m.values.max_abs() / m.balanced_level()
}

#[test]
fn round_line_is_balanced() {
    for p in [2u32, 5, 11] {
        let (h, grid) = gram_on_own_grid(&Potential::round_cp1(), &basis("CP1", p));
        let m = moment_map(&h, &[0.0], &grid).unwrap();
        assert!(
            m.values.max_abs() <= 10.0 * QUAD_TOL,
            "p={p}: {:e}",
            m.values.max_abs()
        );
        assert!(balanced_residual(&h, &[0.0], &grid).unwrap() <= 1e-9);
        // A balanced product is a fixed point of the T-step.
        let next = t_step(&h, &[0.0], &grid).unwrap();
        assert!(next.projective_distance(&h) <= 1e-9);
    }
}

#[test]
fn t_step_and_residual_are_gauge_equivariant() {
    let b = basis("dP8", 2);
    let h = product(&b, 4, 0.8);
    let xi = [-0.3, -0.3];
    let grid = own_grid(&h);
    let a = t_step(&h, &xi, &grid).unwrap();
    let c = 1.7;
    let shifted = h.shifted(c);
    let grid_c = grid.translated(0.0);
    let ac = t_step(&shifted, &xi, &grid_c).unwrap();
    for (u, v) in a.log_weights().iter().zip(ac.log_weights()) {
        assert!((v - u - c).abs() < 1e-9);
    }
    let r = balanced_residual(&h, &xi, &grid).unwrap();
    let rc = balanced_residual(&shifted, &xi, &grid).unwrap();
    assert!((r - rc).abs() <= 1e-9 * r.max(1.0));
    // Ψ is unchanged by the shift: -ln Vol and the weighted mean of ℓ move together.
    let e = energy(&h, &xi, &grid).unwrap();
    let ec = energy(&shifted, &xi, &grid).unwrap();
    assert!((e - ec).abs() < 1e-9);
}

#[test]
fn one_step_from_uniform_reduces_residual() {
    let b = basis("CP1", 2);
    let h = InvariantProduct::uniform(b);
    let grid = own_grid(&h);
    let r0 = balanced_residual(&h, &[0.0], &grid).unwrap();
    let next = t_step(&h, &[0.0], &grid).unwrap();
    let r1 = balanced_residual(&next, &[0.0], &own_grid(&next)).unwrap();
    assert!(r1 < r0, "{r1} !< {r0}");
}

#[test]
fn first_variation_of_energy() {
    let b = basis("dP8", 2);
    let h = product(&b, 9, 0.5);
    let xi = [-0.2, -0.35];
    let grid = own_grid(&h);
    let p = 2.0;
    let m = moment_map(&h, &xi, &grid).unwrap();
    let vol = m.log_volume.exp();
    let dir: Vec<f64> = (0..b.len())
        .map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3)
        .collect();
    // The basis e^{tA}s has log-weights ℓ + 2tA.
    let at = |t: f64| {
        let lw = h
            .log_weights()
            .iter()
            .zip(&dir)
            .map(|(l, a)| l + 2.0 * t * a)
            .collect();
        energy(&h.with_log_weights(lw).unwrap(), &xi, &grid).unwrap()
    };
    let t = 1e-4;
    let fd = (at(t) - at(-t)) / (2.0 * t);
    let d: Vec<f64> = (0..b.len())
        .map(|i| (b.pairing(i, &xi) / p).exp())
        .collect();
    let predicted = -2.0 / (p * vol)
        * (0..b.len())
            .map(|i| d[i] * m.values.entries()[i] * dir[i])
            .sum::<f64>();
    assert!(
        (fd - predicted).abs() <= 1e-6 * predicted.abs().max(1e-3),
        "{fd} vs {predicted}"
    );
}

#[test]
fn energy_decrease_matches_dissipation_integral() {
    let mut config = BalanceConfig::new(4, vec![0.0]);
    config.mode = FlowMode::GradientFlow;
    config.initial = InitialProduct::Uniform;
    config.max_step = 0.05;
    config.initial_step = 0.05;
    config.tolerance = 1e-7;
    config.max_iterations = 20_000;
    let state = run_flow(&preset("CP1"), &config).unwrap();
    assert!(state.converged);
    let decrease: f64 = state
        .steps
        .iter()
        .map(|s| s.energy_before - s.energy_after)
        .sum();
    // Left Riemann sum of the dissipation rate over flow time.
    let integral: f64 = state.steps.iter().map(|s| s.dissipation * s.dt).sum();
    assert!(decrease > 0.0);
    assert!(
        (integral / decrease - 1.0).abs() <= 0.05,
        "{integral} vs {decrease}"
    );
}

#[test]
fn flows_converge_monotonically() {
    for (name, p, mode) in [
        ("CP1", 6, FlowMode::TIteration),
        ("CP1", 3, FlowMode::GradientFlow),
        ("CP2", 2, FlowMode::TIteration),
    ] {
        let mut config = BalanceConfig::new(p, vec![0.0; preset(name).dim()]);
        config.mode = mode;
        config.max_iterations = 2000;
        config.initial = InitialProduct::Uniform;
        let state = run_flow(&preset(name), &config).unwrap();
        assert!(state.converged, "{name} p={p}");
        assert!(state.final_residual() <= 1e-9);
        for (i, s) in state.steps.iter().enumerate() {
            assert!(
                s.energy_after <= s.energy_before + 1e-12 * s.energy_before.abs().max(1.0),
                "{name}: step {i}"
            );
        }
        assert_eq!(state.steps.len(), state.iterations);
        assert!(state
            .residual_history
            .iter()
            .all(|r| r.is_finite() && *r >= 0.0));
    }
}

#[test]
fn converged_dp8_state_satisfies_every_characterisation() {
    let b = basis("dP8", 3);
    let xi = solve_xi_p(&b, 1e-12).unwrap().solution.as_slice().to_vec();
    let state = run_flow(&preset("dP8"), &BalanceConfig::new(3, xi.clone())).unwrap();
    assert!(state.converged);
    let h = &state.product;
    // Swap symmetry of the reference start survives.
    for a in 0..b.len() {
        let pt = b.point(a);
        let s = b.index_of(&[pt[1], pt[0]]).unwrap();
        assert!((h.log_weights()[a] - h.log_weights()[s]).abs() < 1e-12);
    }
    // Moment map and residual vanish together.
    let tol = state.final_residual();
    assert!(relative_moment(h, &xi, &state.grid) <= 50.0 * 1e-9);
    assert!(tol <= 1e-9);
    // Rescaled Futaki invariant vanishes at ξ_p.
    for eta in [[1.0, 0.0], [0.0, 1.0]] {
        assert!(quantized_futaki(&b, &xi, &eta).abs() / 27.0 <= 1e-7);
    }
    // The Gram product of the twisted Fubini–Study metric reproduces H up to scale.
    let ambient = fs_potential(&twist_product(h, &xi));
    let grid = build_grid(&ambient, &b, &GridOptions::default()).unwrap();
    let g = gram(&ambient, &b, &grid).unwrap();
    assert!(
        g.projective_distance(h) <= 1e-8,
        "{}",
        g.projective_distance(h)
    );
}

#[test]
fn t_iteration_preserves_swap_symmetry_at_every_step() {
    let b = basis("dP8", 2);
    let xi = [-0.4, -0.4];
    let mut h = InvariantProduct::uniform(b.clone());
    let grid = own_grid(&h);
    for _ in 0..8 {
        h = t_step(&h, &xi, &grid).unwrap();
        for a in 0..b.len() {
            let pt = b.point(a);
            let s = b.index_of(&[pt[1], pt[0]]).unwrap();
            assert!((h.log_weights()[a] - h.log_weights()[s]).abs() <= 1e-12);
        }
    }
}

#[test]
fn soliton_residual_and_comparison() {
    let round = Potential::round_cp1();
    let b = basis("CP1", 4);
    let grid = build_grid(&round, &b, &GridOptions::default()).unwrap();
    assert!(soliton_residual(&round, &[0.0], &grid).unwrap().variance <= 1e-12);
    let other = fs_potential(&product(&b, 2, 0.7));
    let r = soliton_residual(&other, &[0.0], &grid).unwrap();
    assert!(r.variance > 1e-6 && r.spread > 0.0);
    let d = compare_to_soliton(&round, &round, &grid);
    assert_eq!((d.sup, d.l2), (0.0, 0.0));
    let a = compare_to_soliton(&other, &round, &grid);
    let shifted = compare_to_soliton(
        &other.clone().with_gauge(3.0),
        &round.clone().with_gauge(-1.0),
        &grid,
    );
    assert!((a.sup - shifted.sup).abs() < 1e-12 && (a.l2 - shifted.l2).abs() < 1e-12);
    assert!(a.sup > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn obstruction_identities_hold_for_every_product(seed in 0u64..500, amp in 0.0f64..1.5, x in -0.8f64..0.8, y in -0.8f64..0.8, name in prop::sample::select(vec!["dP8", "CP2"])) {
        let b = basis(name, 2);
        let h = product(&b, seed, amp);
        let xi = [x, y];
        let grid = own_grid(&h);
        let m = moment_map(&h, &xi, &grid).unwrap();
        let level = m.balanced_level();
        let trace = m.twisted_trace(&b, &xi);
        prop_assert!(trace.abs() <= 10.0 * QUAD_TOL * level * b.len() as f64);
        for eta in [[1.0, 0.0], [0.0, 1.0]] {
            let pairing = m.pairing(&b, &xi, &eta);
            let expected = -level * quantized_futaki(&b, &xi, &eta);
            prop_assert!((pairing - expected).abs() <= 10.0 * QUAD_TOL * level * b.len() as f64 * 2.0,
                "{pairing} vs {expected}");
        }
    }
}
