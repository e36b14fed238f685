//! Relative moment map, balancing flows and soliton diagnostics.
//!
//! For a product `H` with log-weights `ℓ`, level `p` and field `ξ`, write
//! `d_α = e^{⟨α,ξ⟩/p}`, `Tr = Σ d_α`, `φ = FS(H)` and
//! `G_α = e^{-ℓ_α} (2π)ⁿ ∫ e^{⟨α,x⟩ - (p+1)φ(x)} dx`. The twisted Gram entry
//! `G^tw_α`, defined with `φ(x + ξ/p)`, equals `G_α / d_α` after the change of
//! variables `x ↦ x - ξ/p`, so every integral below runs on one grid.
//!
//! * moment map `μ_α = G^tw_α - Vol/Tr`, `Vol = (2π)ⁿ ∫ e^{-φ}`
//! * T-step `ℓ'_α = ℓ_α + ln G^tw_α + ln(Tr/Vol)`
//! * energy `Ψ = -ln Vol + (1/p) Σ d_α ℓ_α / Tr`, which satisfies
//!   `dΨ/dt = (2/(p Vol)) Σ d_α μ_α A_α` along `ℓ - 2tA`.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::BalanceError;
use crate::math::{exp, expm1, fabs, log_sum_exp, sqrt, LN_2PI};
use crate::parallel::{map_indexed, max_indexed};
use crate::quadrature::{build_grid, integrate_scaled, tilted_sums, GridOptions, QuadratureGrid};
use crate::quantization::{fs_potential, gram, DiagonalObservable, InvariantProduct, Potential};
use crate::toric::{lattice_points, ReflexivePolytope, SectionBasis};

/// `ln d_α = ⟨α,ξ⟩/p` for every section.
pub fn log_twist_factors(basis: &SectionBasis, xi: &[f64]) -> Vec<f64> {
    let p = basis.level() as f64;
    (0..basis.len()).map(|i| basis.pairing(i, xi) / p).collect()
}

/// Everything a step needs about one product on one grid.
#[derive(Clone, Debug)]
struct Evaluation {
    product: InvariantProduct,
    /// `FS(H)` at the grid nodes.
    fs: Vec<f64>,
    log_volume: f64,
    /// `ln G^tw_α`.
    log_gram: Vec<f64>,
}

fn evaluate_with(
    product: InvariantProduct,
    fs: Vec<f64>,
    xi: &[f64],
    grid: &QuadratureGrid,
) -> Result<Evaluation, BalanceError> {
    let basis = product.basis().clone();
    let n = basis.dim() as f64;
    let c = basis.level() as f64 + 1.0;
    if fs.iter().any(|v| !v.is_finite()) {
        return Err(crate::error::QuadratureError::NonFinite.into());
    }
    let base: Vec<f64> = fs.iter().map(|v| -c * v).collect();
    let neg: Vec<f64> = fs.iter().map(|v| -v).collect();
    let log_volume = n * LN_2PI + integrate_scaled(grid, &neg, None).ln();
    let twist = log_twist_factors(&basis, xi);
    let sums = tilted_sums(grid, &base, basis.coords_f64(), []);
    let log_gram = sums
        .iter()
        .zip(product.log_weights())
        .zip(&twist)
        .map(|((s, l), t)| n * LN_2PI + s.ln() - l - t)
        .collect();
    Ok(Evaluation {
        product,
        fs,
        log_volume,
        log_gram,
    })
}

fn evaluate(
    product: &InvariantProduct,
    xi: &[f64],
    grid: &QuadratureGrid,
) -> Result<Evaluation, BalanceError> {
    let fs = fs_potential(product).values_on(grid);
    evaluate_with(product.clone(), fs, xi, grid)
}

impl Evaluation {
    fn log_trace(&self, xi: &[f64]) -> f64 {
        log_sum_exp(&log_twist_factors(self.product.basis(), xi))
    }

    /// `ln(G^tw_α Tr / Vol)`, the T-step increment.
    fn increments(&self, xi: &[f64]) -> Vec<f64> {
        let shift = self.log_trace(xi) - self.log_volume;
        self.log_gram.iter().map(|g| g + shift).collect()
    }

    fn energy(&self, xi: &[f64]) -> f64 {
        let basis = self.product.basis();
        let twist = log_twist_factors(basis, xi);
        let lt = log_sum_exp(&twist);
        let p = basis.level() as f64;
        let s: f64 = twist
            .iter()
            .zip(self.product.log_weights())
            .map(|(t, l)| exp(t - lt) * l)
            .sum();
        -self.log_volume + s / p
    }

    fn moment_map(&self, xi: &[f64]) -> MomentMap {
        let log_trace = self.log_trace(xi);
        let offset = exp(self.log_volume - log_trace);
        let values = self.log_gram.iter().map(|g| exp(*g) - offset).collect();
        MomentMap {
            values: DiagonalObservable(values),
            log_gram: self.log_gram.clone(),
            log_volume: self.log_volume,
            log_trace,
        }
    }

    /// `(2/(p Vol)) Σ d_α μ_α²`, the rate of energy decrease along the flow.
    fn dissipation(&self, xi: &[f64]) -> f64 {
        let mm = self.moment_map(xi);
        let basis = self.product.basis();
        let p = basis.level() as f64;
        let s: f64 = log_twist_factors(basis, xi)
            .iter()
            .zip(mm.values.entries())
            .map(|(t, m)| exp(*t) * m * m)
            .sum();
        2.0 / (p * exp(self.log_volume)) * s
    }
}

/// `sup_x |σ(e^{L_ξ/p}) ρ Vol/Tr - 1|` from the node values of `FS(H)` and
/// `FS(T(H))`: the balanced quantity equals `e^{p(FS(T(H)) - FS(H))}`.
fn residual_from(level: u32, fs: &[f64], fs_next: &[f64]) -> f64 {
    let p = level as f64;
    max_indexed(fs.len(), &|i| fabs(expm1(p * (fs_next[i] - fs[i]))))
}

/// The relative moment map together with the pieces it is built from.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentMap {
    pub values: DiagonalObservable,
    /// `ln G^tw_α`.
    pub log_gram: Vec<f64>,
    pub log_volume: f64,
    /// `ln Tr[e^{L_ξ/p}]`.
    pub log_trace: f64,
}

impl MomentMap {
    /// `Σ_α d_α μ_α`, zero for every product.
    pub fn twisted_trace(&self, basis: &SectionBasis, xi: &[f64]) -> f64 {
        log_twist_factors(basis, xi)
            .iter()
            .zip(self.values.entries())
            .map(|(t, m)| exp(*t) * m)
            .sum()
    }

    /// `Σ_α ⟨α,η⟩ d_α μ_α`, which equals `-(Vol/Tr) Fut_p^ξ(η)`.
    pub fn pairing(&self, basis: &SectionBasis, xi: &[f64], eta: &[f64]) -> f64 {
        log_twist_factors(basis, xi)
            .iter()
            .zip(self.values.entries())
            .enumerate()
            .map(|(i, (t, m))| basis.pairing(i, eta) * exp(*t) * m)
            .sum()
    }

    /// `Vol / Tr`, the common value of `G^tw` at a balanced product.
    pub fn balanced_level(&self) -> f64 {
        exp(self.log_volume - self.log_trace)
    }
}

pub fn moment_map(
    product: &InvariantProduct,
    xi: &[f64],
    grid: &QuadratureGrid,
) -> Result<MomentMap, BalanceError> {
    Ok(evaluate(product, xi, grid)?.moment_map(xi))
}

/// One T-step; its fixed points are exactly the zeros of the moment map.
pub fn t_step(
    product: &InvariantProduct,
    xi: &[f64],
    grid: &QuadratureGrid,
) -> Result<InvariantProduct, BalanceError> {
    let ev = evaluate(product, xi, grid)?;
    let inc = ev.increments(xi);
    let lw = product
        .log_weights()
        .iter()
        .zip(&inc)
        .map(|(l, d)| l + d)
        .collect();
    Ok(product.with_log_weights(lw)?)
}

/// `sup` over grid nodes of `|σ(e^{L_ξ/p}) ρ Vol/Tr - 1|`.
pub fn balanced_residual(
    product: &InvariantProduct,
    xi: &[f64],
    grid: &QuadratureGrid,
) -> Result<f64, BalanceError> {
    let fs = fs_potential(product).values_on(grid);
    let next = fs_potential(&t_step(product, xi, grid)?).values_on(grid);
    Ok(residual_from(product.level(), &fs, &next))
}

/// `Ψ(H)` relative to the product with all weights one.
pub fn energy(
    product: &InvariantProduct,
    xi: &[f64],
    grid: &QuadratureGrid,
) -> Result<f64, BalanceError> {
    Ok(evaluate(product, xi, grid)?.energy(xi))
}

/// How the flow advances.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowMode {
    /// `ℓ ← ℓ + τ ln(G^tw Tr/Vol)` with `τ = 1` unless the energy would rise.
    TIteration,
    /// Explicit Euler for `dℓ/dt = 2μ` with adaptive step.
    GradientFlow,
}

/// Where the flow starts.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialProduct {
    /// Gram product of the reference potential (round for the line, vertex
    /// log-sum-exp otherwise).
    ReferenceGram,
    Uniform,
    LogWeights(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BalanceConfig {
    pub xi: Vec<f64>,
    pub level: u32,
    pub mode: FlowMode,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub initial: InitialProduct,
    pub grid: GridOptions,
    /// Initial gradient-flow step in units of `2 dt Vol/Tr`.
    pub initial_step: f64,
    /// Largest gradient-flow step in the same units.
    pub max_step: f64,
    /// Grid rebuilds allowed after convergence on the current grid.
    pub max_refits: usize,
}

impl BalanceConfig {
    pub fn new(level: u32, xi: Vec<f64>) -> Self {
        Self {
            xi,
            level,
            mode: FlowMode::TIteration,
            tolerance: 1e-9,
            max_iterations: 500,
            initial: InitialProduct::ReferenceGram,
            grid: GridOptions::default(),
            initial_step: 0.05,
            max_step: 1.0,
            max_refits: 3,
        }
    }
}

/// One accepted step, with both energies evaluated on the same grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowStep {
    /// Flow time of the step; T-iteration steps are recorded with their
    /// linearised time.
    pub dt: f64,
    pub energy_before: f64,
    pub energy_after: f64,
    /// `(2/(p Vol)) Σ d μ²` at the start of the step.
    pub dissipation: f64,
}

/// Path of a flow run. Histories have one entry per visited state
/// (a state is revisited after a grid change).
#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub product: InvariantProduct,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub energy_history: Vec<f64>,
    pub steps: Vec<FlowStep>,
    /// Rejected trial steps (energy increase).
    pub rejected_steps: usize,
    pub converged: bool,
    /// Residual of the final product on a grid rebuilt for its own potential.
    pub check_residual: f64,
    pub grid: QuadratureGrid,
    /// Rebuilds at the requested tolerance after convergence.
    pub grid_refits: usize,
    /// History indices at which a new grid takes effect.
    pub grid_changes: Vec<usize>,
}

impl FlowState {
    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().unwrap_or(&f64::INFINITY)
    }
}

const ENERGY_SLACK: f64 = 1e-12;
const MIN_STEP: f64 = 1e-10;
const COARSE_GRID_FACTOR: f64 = 1e3;
/// Residual reduction after which the loose grid is refitted.
const REFIT_DROP: f64 = 1e-3;

fn same_grid(a: &QuadratureGrid, b: &QuadratureGrid) -> bool {
    a.order() == b.order() && a.bounds() == b.bounds() && a.map() == b.map()
}

fn coarse_options(config: &BalanceConfig) -> GridOptions {
    GridOptions {
        tol: config.grid.tol * COARSE_GRID_FACTOR,
        ..config.grid
    }
}

fn initial_product(
    polytope: &ReflexivePolytope,
    basis: &Arc<SectionBasis>,
    config: &BalanceConfig,
) -> Result<InvariantProduct, BalanceError> {
    match &config.initial {
        InitialProduct::Uniform => Ok(InvariantProduct::uniform(basis.clone())),
        InitialProduct::LogWeights(w) => {
            if w.len() != basis.len() {
                return Err(BalanceError::InitMismatch);
            }
            Ok(InvariantProduct::new(basis.clone(), w.clone())?)
        }
        InitialProduct::ReferenceGram => {
            // Only a starting point, so the loose grid suffices.
            let phi = Potential::reference(polytope);
            let grid = build_grid(&phi, basis, &coarse_options(config))?;
            Ok(gram(&phi, basis, &grid)?)
        }
    }
}

/// Runs the configured flow until the balanced residual reaches the
/// tolerance or the iteration budget is spent. Non-convergence is reported
/// through [`FlowState::converged`], not as an error.
pub fn run_flow(
    polytope: &ReflexivePolytope,
    config: &BalanceConfig,
) -> Result<FlowState, BalanceError> {
    let basis = Arc::new(lattice_points(polytope, config.level)?);
    let start = initial_product(polytope, &basis, config)?;
    let xi = &config.xi[..];
    let p = config.level;
    // Most iterations run on a looser grid; convergence there triggers a
    // refit at the requested tolerance, where the flow continues.
    let mut grid = build_grid(&fs_potential(&start), &basis, &coarse_options(config))?;
    let mut ev = evaluate(&start, xi, &grid)?;
    let mut state = FlowState {
        product: start,
        iterations: 0,
        residual_history: Vec::new(),
        energy_history: Vec::new(),
        steps: Vec::new(),
        rejected_steps: 0,
        converged: false,
        check_residual: f64::INFINITY,
        grid: grid.clone(),
        grid_refits: 0,
        grid_changes: Vec::new(),
    };
    let mut coarse_stage = true;
    let mut fit_residual = f64::INFINITY;
    let mut step = match config.mode {
        FlowMode::TIteration => 1.0,
        FlowMode::GradientFlow => config.initial_step,
    };
    loop {
        let psi = ev.energy(xi);
        let inc = ev.increments(xi);
        let full_lw: Vec<f64> = ev
            .product
            .log_weights()
            .iter()
            .zip(&inc)
            .map(|(l, d)| l + d)
            .collect();
        let full = ev.product.with_log_weights(full_lw)?;
        let full_fs = fs_potential(&full).values_on(&grid);
        let residual = residual_from(p, &ev.fs, &full_fs);
        state.residual_history.push(residual);
        state.energy_history.push(psi);
        if residual <= config.tolerance {
            // Confirm on a grid fitted to the converged potential.
            let fitted = build_grid(&fs_potential(&ev.product), &basis, &config.grid)?;
            let same = same_grid(&fitted, &grid);
            if (same && !coarse_stage) || state.grid_refits >= config.max_refits {
                state.check_residual = if same {
                    residual
                } else {
                    balanced_residual(&ev.product, xi, &fitted)?
                };
                state.converged = state.check_residual <= config.tolerance;
                break;
            }
            coarse_stage = false;
            if !same {
                state.grid_refits += 1;
                state.grid_changes.push(state.residual_history.len());
                grid = fitted;
                ev = evaluate(&ev.product, xi, &grid)?;
            }
            continue;
        }
        if !fit_residual.is_finite() {
            fit_residual = residual;
        } else if coarse_stage && residual < REFIT_DROP * fit_residual {
            // The potential has smoothed out since the grid was fitted.
            fit_residual = residual;
            let fitted = build_grid(&fs_potential(&ev.product), &basis, &coarse_options(config))?;
            if !same_grid(&fitted, &grid) {
                state.grid_changes.push(state.residual_history.len());
                grid = fitted;
                ev = evaluate(&ev.product, xi, &grid)?;
                continue;
            }
        }
        if state.iterations >= config.max_iterations {
            state.check_residual = residual;
            break;
        }
        // Trial steps until the energy does not rise.
        let trace_over_volume = exp(ev.log_trace(xi) - ev.log_volume);
        let accepted = loop {
            let (cand, fs) = match config.mode {
                FlowMode::TIteration if step == 1.0 => (full.clone(), full_fs.clone()),
                FlowMode::TIteration => {
                    let lw = ev
                        .product
                        .log_weights()
                        .iter()
                        .zip(&inc)
                        .map(|(l, d)| l + step * d)
                        .collect();
                    let c = ev.product.with_log_weights(lw)?;
                    let fs = fs_potential(&c).values_on(&grid);
                    (c, fs)
                }
                FlowMode::GradientFlow => {
                    let lw = ev
                        .product
                        .log_weights()
                        .iter()
                        .zip(&inc)
                        .map(|(l, d)| l + step * expm1(*d))
                        .collect();
                    let c = ev.product.with_log_weights(lw)?;
                    let fs = fs_potential(&c).values_on(&grid);
                    (c, fs)
                }
            };
            let next = evaluate_with(cand, fs, xi, &grid)?;
            let psi_next = next.energy(xi);
            if psi_next <= psi + ENERGY_SLACK * fabs(psi) {
                break next;
            }
            state.rejected_steps += 1;
            step *= 0.5;
            if step < MIN_STEP {
                return Err(BalanceError::EnergyIncrease);
            }
        };
        // dℓ = 2 dt μ = step (Tr/Vol) μ, so dt = step · Tr/(2 Vol).
        state.steps.push(FlowStep {
            dt: 0.5 * step * trace_over_volume,
            energy_before: psi,
            energy_after: accepted.energy(xi),
            dissipation: ev.dissipation(xi),
        });
        ev = accepted;
        state.iterations += 1;
        step = match config.mode {
            FlowMode::TIteration => 1.0,
            FlowMode::GradientFlow => (step * 1.2).min(config.max_step),
        };
    }
    state.product = ev.product;
    state.grid = grid;
    Ok(state)
}

/// Spread of the soliton equation residual of a potential.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolitonResidual {
    /// Variance of `r` under `dν/Vol`.
    pub variance: f64,
    /// `sup r - inf r`.
    pub spread: f64,
}

/// Nodes whose `dν` weight is within this many e-folds of the largest.
const WINDOW: f64 = 40.0;

/// `r = ln(dν density) - θ(ξ) - ln(ωⁿ/n! density)
///    = n ln 2π - φ - ⟨∇φ,ξ⟩ - ln det ∇²φ`,
/// which is constant exactly when `φ` is a soliton potential for `ξ`.
/// Both statistics use the grid nodes carrying non-negligible `dν` mass.
pub fn soliton_residual(
    phi: &Potential,
    xi: &[f64],
    grid: &QuadratureGrid,
) -> Result<SolitonResidual, BalanceError> {
    let n = grid.dim();
    let values = phi.values_on(grid);
    let logw: Vec<f64> = values
        .iter()
        .zip(grid.log_weights())
        .map(|(v, w)| w - v)
        .collect();
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let window: Vec<usize> = (0..logw.len())
        .filter(|&i| logw[i] >= top - WINDOW)
        .collect();
    let samples: Vec<Option<(f64, f64)>> = map_indexed(window.len(), |k| {
        let i = window[k];
        let mut scratch = Vec::new();
        let (jet, log_det) = phi.jet_and_log_det(grid.point(i), &mut scratch);
        if !log_det.is_finite() {
            return None;
        }
        let theta: f64 = (0..n).map(|d| jet.grad[d] * xi[d]).sum();
        let r = n as f64 * LN_2PI - jet.value - theta - log_det;
        Some((r, exp(logw[i] - top)))
    });
    let mut rs = Vec::with_capacity(samples.len());
    for s in samples {
        rs.push(s.ok_or(BalanceError::DegenerateHessian)?);
    }
    let total: f64 = rs.iter().map(|s| s.1).sum();
    let mean = rs.iter().map(|s| s.0 * s.1).sum::<f64>() / total;
    let variance = rs
        .iter()
        .map(|s| (s.0 - mean) * (s.0 - mean) * s.1)
        .sum::<f64>()
        / total;
    let hi = rs.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    let lo = rs.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    Ok(SolitonResidual {
        variance,
        spread: hi - lo,
    })
}

/// Distances between two potentials after removing their means under the
/// probability measure `dν/Vol` of `target`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PotentialDistance {
    pub sup: f64,
    pub l2: f64,
}

pub fn compare_to_soliton(
    candidate: &Potential,
    target: &Potential,
    grid: &QuadratureGrid,
) -> PotentialDistance {
    let a = candidate.values_on(grid);
    let b = target.values_on(grid);
    let logw: Vec<f64> = b
        .iter()
        .zip(grid.log_weights())
        .map(|(v, w)| w - v)
        .collect();
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| exp(l - top)).collect();
    let total: f64 = w.iter().sum();
    let mean = |v: &[f64]| v.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / total;
    let (ma, mb) = (mean(&a), mean(&b));
    let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - ma) - (y - mb)).collect();
    let sup = diff.iter().fold(0.0f64, |m, d| m.max(fabs(*d)));
    let l2 = sqrt(diff.iter().zip(&w).map(|(d, w)| d * d * w).sum::<f64>() / total);
    PotentialDistance { sup, l2 }
}
