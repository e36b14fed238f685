//! Quantized and classical Futaki machinery.
//!
//! `F_p(ξ) = p Σ_α e^{⟨α,ξ⟩/p}` over the lattice points of `pP` and its
//! classical counterpart `F(ξ) = ∫_P e^{⟨u,ξ⟩} du` are smooth, strictly convex
//! and proper; their minimisers are the soliton vector fields `ξ_p` and `ξ_∞`.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::SolverError;
use crate::math::{exp, fabs, log, loglog_slope, pow, sqrt};
use crate::parallel::map_indexed;
use crate::toric::{
    lattice_points, polytope_exponential_moments, ReflexivePolytope, SectionBasis, MAX_DIM,
};

/// An element of the Lie algebra of the real torus, `ξ ∈ ℝⁿ`.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusVector(Vec<f64>);

impl TorusVector {
    /// Fails on non-finite components or more than two of them.
    pub fn new(components: Vec<f64>) -> Option<Self> {
        (components.len() <= MAX_DIM && components.iter().all(|c| c.is_finite()))
            .then_some(Self(components))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        sqrt(self.0.iter().map(|c| c * c).sum())
    }

    pub fn distance(&self, other: &Self) -> f64 {
        sqrt(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| (a - b) * (a - b))
                .sum(),
        )
    }
}

impl AsRef<[f64]> for TorusVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Value, gradient and Hessian of a convex functional on the torus algebra.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FunctionalJet {
    pub value: f64,
    pub grad: [f64; MAX_DIM],
    pub hess: [[f64; MAX_DIM]; MAX_DIM],
}

/// Softmax-weighted statistics of `α/p` under weights `e^{⟨α,ξ⟩/p}`:
/// log of the weight sum, mean and covariance.
struct WeightedMoments {
    shift: f64,
    total: f64,
    log_total: f64,
    mean: [f64; MAX_DIM],
    cov: [[f64; MAX_DIM]; MAX_DIM],
}

fn weighted_moments(basis: &SectionBasis, xi: &[f64]) -> WeightedMoments {
    let n = basis.dim();
    let p = basis.level() as f64;
    let exps: Vec<f64> = (0..basis.len()).map(|i| basis.pairing(i, xi) / p).collect();
    let shift = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut first = [0.0; MAX_DIM];
    let mut second = [[0.0; MAX_DIM]; MAX_DIM];
    for (i, e) in exps.iter().enumerate() {
        let w = exp(e - shift);
        let u = basis.point_f64(i);
        total += w;
        for a in 0..n {
            first[a] += w * u[a] / p;
            for b in 0..n {
                second[a][b] += w * u[a] * u[b] / (p * p);
            }
        }
    }
    let mut mean = [0.0; MAX_DIM];
    let mut cov = [[0.0; MAX_DIM]; MAX_DIM];
    for a in 0..n {
        mean[a] = first[a] / total;
    }
    for a in 0..n {
        for b in 0..n {
            cov[a][b] = second[a][b] / total - mean[a] * mean[b];
        }
    }
    WeightedMoments {
        shift,
        total,
        log_total: shift + log(total),
        mean,
        cov,
    }
}

/// `F_p(ξ) = p Σ_α e^{⟨α,ξ⟩/p}` with gradient `Σ_α α e^{⟨α,ξ⟩/p}` and Hessian
/// `(1/p) Σ_α α αᵀ e^{⟨α,ξ⟩/p}`.
pub fn f_p(basis: &SectionBasis, xi: &[f64]) -> FunctionalJet {
    let n = basis.dim();
    let p = basis.level() as f64;
    let m = weighted_moments(basis, xi);
    let total = m.total * exp(m.shift);
    let mut out = FunctionalJet {
        value: p * total,
        grad: [0.0; MAX_DIM],
        hess: [[0.0; MAX_DIM]; MAX_DIM],
    };
    for a in 0..n {
        out.grad[a] = p * total * m.mean[a];
        for b in 0..n {
            out.hess[a][b] = p * total * (m.cov[a][b] + m.mean[a] * m.mean[b]);
        }
    }
    out
}

/// `Fut_p^ξ(η) = Tr[L_η e^{L_ξ/p}] = Σ_α ⟨α,η⟩ e^{⟨α,ξ⟩/p}`.
pub fn quantized_futaki(basis: &SectionBasis, xi: &[f64], eta: &[f64]) -> f64 {
    let p = basis.level() as f64;
    let mut s = 0.0;
    for i in 0..basis.len() {
        s += basis.pairing(i, eta) * exp(basis.pairing(i, xi) / p);
    }
    s
}

/// `F_p(η) / p^{n+1}`, the Riemann sum approximating `∫_P e^{⟨u,η⟩} du`.
pub fn normalized_f_p(basis: &SectionBasis, eta: &[f64]) -> f64 {
    let p = basis.level() as f64;
    f_p(basis, eta).value / pow(p, basis.dim() as f64 + 1.0)
}

/// `F(η) = ∫_P e^{⟨u,η⟩} du`.
pub fn classical_functional(polytope: &ReflexivePolytope, eta: &[f64]) -> Result<f64, SolverError> {
    Ok(polytope_exponential_moments(polytope, eta)?.total)
}

/// Outcome of a Newton solve for a soliton vector field.
#[derive(Clone, Debug, PartialEq)]
pub struct SolitonSolveReport {
    pub solution: TorusVector,
    pub iterations: usize,
    /// Norm of the gradient of `ln F`, i.e. of the weighted barycenter.
    pub grad_norm: f64,
    /// Ratio of extreme Hessian eigenvalues at the solution.
    pub hessian_condition: f64,
}

const MAX_NEWTON_STEPS: usize = 200;
const ARMIJO_C: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_HALVINGS: usize = 60;

/// Objective `ln F`, its gradient and Hessian at a point.
type LogJet = (f64, [f64; MAX_DIM], [[f64; MAX_DIM]; MAX_DIM]);

fn solve_2x2(
    h: &[[f64; MAX_DIM]; MAX_DIM],
    g: &[f64; MAX_DIM],
    n: usize,
) -> Option<[f64; MAX_DIM]> {
    if n == 1 {
        return (h[0][0] > 0.0).then(|| [g[0] / h[0][0], 0.0]);
    }
    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    if !(det > 0.0 && h[0][0] > 0.0) {
        return None;
    }
    Some([
        (h[1][1] * g[0] - h[0][1] * g[1]) / det,
        (h[0][0] * g[1] - h[1][0] * g[0]) / det,
    ])
}

fn condition(h: &[[f64; MAX_DIM]; MAX_DIM], n: usize) -> f64 {
    if n == 1 {
        return 1.0;
    }
    let tr = h[0][0] + h[1][1];
    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    let disc = sqrt((0.25 * tr * tr - det).max(0.0));
    let (hi, lo) = (0.5 * tr + disc, 0.5 * tr - disc);
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

fn norm(v: &[f64]) -> f64 {
    sqrt(v.iter().map(|c| c * c).sum())
}

/// Damped Newton on a strictly convex `ln F` with Armijo backtracking.
fn newton<J>(dim: usize, start: &[f64], tol: f64, jet: J) -> Result<SolitonSolveReport, SolverError>
where
    J: Fn(&[f64]) -> Result<LogJet, SolverError>,
{
    let mut x = [0.0; MAX_DIM];
    x[..dim].copy_from_slice(&start[..dim]);
    let (mut f, mut g, mut h) = jet(&x[..dim])?;
    for it in 0..=MAX_NEWTON_STEPS {
        let gn = norm(&g[..dim]);
        if gn <= tol {
            return Ok(SolitonSolveReport {
                solution: TorusVector(x[..dim].to_vec()),
                iterations: it,
                grad_norm: gn,
                hessian_condition: condition(&h, dim),
            });
        }
        if it == MAX_NEWTON_STEPS {
            return Err(SolverError::NotConverged {
                iterations: it,
                grad_norm: gn,
            });
        }
        let step = solve_2x2(&h, &g, dim).ok_or(SolverError::IndefiniteHessian)?;
        let slope: f64 = (0..dim).map(|d| -g[d] * step[d]).sum();
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let mut y = x;
            for d in 0..dim {
                y[d] -= t * step[d];
            }
            let trial = jet(&y[..dim])?;
            if trial.0 <= f + ARMIJO_C * t * slope {
                accepted = Some((y, trial));
                break;
            }
            t *= BACKTRACK;
        }
        let Some((y, trial)) = accepted else {
            // At rounding level the objective no longer resolves the decrease;
            // a full step that shrinks the gradient is still progress.
            let mut y = x;
            for d in 0..dim {
                y[d] -= step[d];
            }
            let trial = jet(&y[..dim])?;
            if norm(&trial.1[..dim]) < gn {
                x = y;
                (f, g, h) = trial;
                continue;
            }
            return Err(SolverError::LineSearchFailed);
        };
        x = y;
        (f, g, h) = trial;
    }
    unreachable!()
}

fn log_f_p_jet(basis: &SectionBasis, xi: &[f64]) -> LogJet {
    let p = basis.level() as f64;
    let m = weighted_moments(basis, xi);
    let mut g = [0.0; MAX_DIM];
    let mut h = [[0.0; MAX_DIM]; MAX_DIM];
    for a in 0..basis.dim() {
        g[a] = m.mean[a];
        for b in 0..basis.dim() {
            h[a][b] = m.cov[a][b];
        }
    }
    (log(p) + m.log_total, g, h)
}

/// The unique minimiser `ξ_p` of `F_p`, by Newton from the origin.
///
/// Stops when the weighted barycenter `Σ (α/p) e^{⟨α,ξ⟩/p} / Σ e^{⟨α,ξ⟩/p}`,
/// which is `∇ ln F_p`, has norm at most `tol`.
pub fn solve_xi_p(basis: &SectionBasis, tol: f64) -> Result<SolitonSolveReport, SolverError> {
    solve_xi_p_from(basis, &[0.0; MAX_DIM][..basis.dim()], tol)
}

/// As [`solve_xi_p`] from an arbitrary starting point.
pub fn solve_xi_p_from(
    basis: &SectionBasis,
    start: &[f64],
    tol: f64,
) -> Result<SolitonSolveReport, SolverError> {
    newton(basis.dim(), start, tol, |xi| Ok(log_f_p_jet(basis, xi)))
}

/// The minimiser `ξ_∞` of `F(ξ) = ∫_P e^{⟨u,ξ⟩} du`, i.e. the zero of the
/// exponential barycenter; stops once `‖M(ξ)‖ / F(ξ) ≤ tol`.
pub fn solve_xi_infinity(
    polytope: &ReflexivePolytope,
    tol: f64,
) -> Result<SolitonSolveReport, SolverError> {
    let n = polytope.dim();
    newton(n, &[0.0; MAX_DIM][..n], tol, |xi| {
        let m = polytope_exponential_moments(polytope, xi)?;
        let mut g = [0.0; MAX_DIM];
        let mut h = [[0.0; MAX_DIM]; MAX_DIM];
        for a in 0..n {
            g[a] = m.first[a] / m.total;
        }
        for a in 0..n {
            for b in 0..n {
                h[a][b] = m.second[a][b] / m.total - g[a] * g[b];
            }
        }
        Ok((log(m.total), g, h))
    })
}

/// One level of [`xi_asymptotics`].
#[derive(Clone, Debug, PartialEq)]
pub struct XiRow {
    pub level: u32,
    pub outcome: Result<(TorusVector, f64), String>,
}

impl XiRow {
    pub fn xi(&self) -> Option<&TorusVector> {
        self.outcome.as_ref().ok().map(|o| &o.0)
    }

    /// `|ξ_p - ξ_∞|`.
    pub fn gap(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|o| o.1)
    }
}

/// `ξ_p` along a sequence of levels compared with `ξ_∞`.
#[derive(Clone, Debug, PartialEq)]
pub struct XiAsymptotics {
    pub xi_infinity: TorusVector,
    pub rows: Vec<XiRow>,
    /// Least-squares slope of `ln |ξ_p - ξ_∞|` against `ln p`; `None` when
    /// fewer than two gaps are positive.
    pub slope: Option<f64>,
}

pub fn xi_asymptotics(
    polytope: &ReflexivePolytope,
    levels: &[u32],
    tol: f64,
) -> Result<XiAsymptotics, SolverError> {
    let limit = solve_xi_infinity(polytope, tol)?.solution;
    let rows = map_indexed(levels.len(), |k| {
        let level = levels[k];
        let outcome = lattice_points(polytope, level)
            .map_err(SolverError::from)
            .and_then(|b| solve_xi_p(&b, tol))
            .map(|r| {
                let gap = r.solution.distance(&limit);
                (r.solution, gap)
            })
            .map_err(|e| e.to_string());
        XiRow { level, outcome }
    });
    let (ps, gaps): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter_map(|r| r.gap().map(|g| (r.level as f64, g)))
        .unzip();
    let slope = loglog_slope(&ps, &gaps);
    Ok(XiAsymptotics {
        xi_infinity: limit,
        rows,
        slope,
    })
}

/// `|F_p(η)/p^{n+1} - F(η)|` for each level.
pub fn riemann_gaps(
    polytope: &ReflexivePolytope,
    levels: &[u32],
    eta: &[f64],
) -> Result<Vec<f64>, SolverError> {
    let exact = classical_functional(polytope, eta)?;
    levels
        .iter()
        .map(|&p| {
            Ok(fabs(
                normalized_f_p(&lattice_points(polytope, p)?, eta) - exact,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(name: &str, p: u32) -> SectionBasis {
        lattice_points(&ReflexivePolytope::preset(name).unwrap(), p).unwrap()
    }

    #[test]
    fn trivial_values_at_origin() {
        assert_eq!(f_p(&basis("CP1", 1), &[0.0]).value, 3.0);
        let cp2 = basis("CP2", 1);
        let j = f_p(&cp2, &[0.0, 0.0]);
        assert_eq!(j.value, 10.0);
        assert_eq!(j.grad, [0.0, 0.0]);
    }

    #[test]
    fn futaki_is_directional_derivative() {
        let b = basis("dP8", 3);
        let (xi, eta) = ([0.3, -0.7], [0.4, 1.1]);
        let j = f_p(&b, &xi);
        let d = j.grad[0] * eta[0] + j.grad[1] * eta[1];
        assert!((quantized_futaki(&b, &xi, &eta) - d).abs() < 1e-10 * d.abs().max(1.0));
        assert!(quantized_futaki(&b, &[0.0, 0.0], &[1.0, 0.0]) > 0.0);
        assert_eq!(quantized_futaki(&basis("CP1", 5), &[0.0], &[2.0]), 0.0);
    }

    #[test]
    fn symmetric_polytopes_have_zero_field() {
        for p in 1..=10 {
            let r = solve_xi_p(&basis("CP2", p), 1e-12).unwrap();
            assert!(r.solution.norm() <= 1e-12);
        }
        let r = solve_xi_p(&basis("CP1", 7), 1e-12).unwrap();
        assert!(r.solution.norm() <= 1e-12);
    }

    #[test]
    fn dp8_field_is_diagonal_and_start_independent() {
        let b = basis("dP8", 6);
        let a = solve_xi_p(&b, 1e-12).unwrap();
        let c = solve_xi_p_from(&b, &[2.0, -3.0], 1e-12).unwrap();
        let s = a.solution.as_slice();
        assert!((s[0] - s[1]).abs() < 1e-10);
        assert!(s[0] < 0.0);
        assert!(a.solution.distance(&c.solution) < 1e-10);
    }
}
