//! The quantum channel on the invariant sector and the weighted Laplacian.
//!
//! The channel acts on diagonal observables by `E(A) = T(σ(A)(· + ξ/p))`; in
//! the monomial basis
//! `E_{αβ} = e^{-ℓ_α} (2π)ⁿ ∫ w_β(x + ξ/p) e^{⟨α,x⟩ - (p+1)φ(x)} dx`
//! with `w_β` the softmax weights of the Berezin symbol. It is self-adjoint
//! for `⟨A,B⟩ = Σ d_α A_α B_α`, `d_α = e^{⟨α,ξ⟩/p}`, so `D^{1/2} E D^{-1/2}`
//! is symmetric.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use alloc::string::{String, ToString};
use alloc::sync::Arc;

use crate::balance::{run_flow, BalanceConfig};
use crate::error::{BalanceError, SpectralError};
use crate::math::{exp, fabs, loglog_slope, LN_2PI};
use crate::parallel::map_indexed;
use crate::quadrature::{build_grid, GridOptions, QuadratureGrid};
use crate::quantization::{
    gram, symbol_weights, twist_product, DiagonalObservable, InvariantProduct, Potential,
};
use crate::soliton::solve_xi_p;
use crate::toric::{lattice_points, ReflexivePolytope, MAX_DIM};

/// Nodes assembled per matrix product.
const BLOCK: usize = 2048;
/// Nodes whose largest Toeplitz density is this far below the global
/// maximum contribute nothing at double precision.
const NODE_CUT: f64 = 80.0;

/// The channel matrix and the weights of its inner product.
#[derive(Clone, Debug)]
pub struct ChannelMatrix {
    matrix: DMatrix<f64>,
    log_twist: Vec<f64>,
}

impl ChannelMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    /// `d_α = e^{⟨α,ξ⟩/p}`.
    pub fn twist_weights(&self) -> Vec<f64> {
        self.log_twist.iter().map(|t| exp(*t)).collect()
    }

    /// `E(A)`.
    pub fn apply(&self, a: &DiagonalObservable) -> DiagonalObservable {
        let v = &self.matrix * DVector::from_column_slice(a.entries());
        DiagonalObservable(v.iter().copied().collect())
    }

    /// `max_α |(E·1)_α - 1|`.
    pub fn unitality_defect(&self) -> f64 {
        self.matrix
            .row_iter()
            .map(|r| fabs(r.sum() - 1.0))
            .fold(0.0, f64::max)
    }

    /// `D^{1/2} E D^{-1/2}`.
    pub fn symmetrized(&self) -> DMatrix<f64> {
        let t = &self.log_twist;
        DMatrix::from_fn(self.len(), self.len(), |a, b| {
            exp(0.5 * (t[a] - t[b])) * self.matrix[(a, b)]
        })
    }

    /// `max |S - Sᵀ|` for the symmetrized matrix `S`.
    pub fn symmetry_defect(&self) -> f64 {
        let s = self.symmetrized();
        let mut worst = 0.0f64;
        for a in 0..self.len() {
            for b in 0..a {
                worst = worst.max(fabs(s[(a, b)] - s[(b, a)]));
            }
        }
        worst
    }
}

/// Assembles the channel matrix for `product = gram(ambient)`.
pub fn channel_matrix(
    product: &InvariantProduct,
    ambient: &Potential,
    xi: &[f64],
    grid: &QuadratureGrid,
) -> Result<ChannelMatrix, SpectralError> {
    let basis = product.basis();
    let n = basis.dim();
    if grid.dim() != n {
        return Err(crate::error::QuadratureError::DimensionMismatch {
            grid: grid.dim(),
            input: n,
        }
        .into());
    }
    let p = basis.level() as f64;
    let count = basis.len();
    let coords = basis.coords_f64();
    let lw = product.log_weights();
    let amb = ambient.values_on(grid);
    let shifted = twist_product(product, xi);
    // log of the Toeplitz density of row α at node i, including the node weight.
    let log_density = |i: usize, a: usize| -> f64 {
        let x = grid.point(i);
        let mut t = n as f64 * LN_2PI + grid.log_weight(i) - (p + 1.0) * amb[i] - lw[a];
        for d in 0..n {
            t += coords[a * n + d] * x[d];
        }
        t
    };
    let peaks: Vec<f64> = map_indexed(grid.len(), |i| {
        (0..count)
            .map(|a| log_density(i, a))
            .fold(f64::NEG_INFINITY, f64::max)
    });
    let top = peaks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(crate::error::QuadratureError::NonFinite.into());
    }
    let nodes: Vec<usize> = (0..grid.len())
        .filter(|&i| peaks[i] > top - NODE_CUT)
        .collect();
    let mut matrix = DMatrix::<f64>::zeros(count, count);
    for chunk in nodes.chunks(BLOCK) {
        let rows: Vec<(Vec<f64>, Vec<f64>)> = map_indexed(chunk.len(), |k| {
            let i = chunk[k];
            let dens = (0..count).map(|a| exp(log_density(i, a))).collect();
            let mut w = Vec::with_capacity(count);
            symbol_weights(&shifted, grid.point(i), &mut w);
            (dens, w)
        });
        let a = DMatrix::from_fn(chunk.len(), count, |k, c| rows[k].0[c]);
        let w = DMatrix::from_fn(chunk.len(), count, |k, c| rows[k].1[c]);
        matrix.gemm_tr(1.0, &a, &w, 1.0);
    }
    let log_twist = (0..count).map(|a| basis.pairing(a, xi) / p).collect();
    Ok(ChannelMatrix { matrix, log_twist })
}

/// Eigen-decomposition of the symmetrized channel, eigenvalues descending.
#[derive(Clone, Debug)]
pub struct ChannelSpectrum {
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors of `E` itself (columns), in the same order.
    pub eigenvectors: DMatrix<f64>,
    pub symmetry_defect: f64,
}

/// Spectrum of `D^{1/2} E D^{-1/2}`. A symmetrization defect above
/// `100·tol` means the weight conventions are broken and is an error.
pub fn channel_spectrum(
    channel: &ChannelMatrix,
    tol: f64,
) -> Result<ChannelSpectrum, SpectralError> {
    let defect = channel.symmetry_defect();
    let limit = 100.0 * tol;
    if !(defect <= limit) {
        return Err(SpectralError::Conventions { defect, limit });
    }
    let s = channel.symmetrized();
    let s = (&s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let t = &channel.log_twist;
    // Eigenvectors of E are D^{-1/2} times those of the symmetrization.
    let eigenvectors = DMatrix::from_fn(channel.len(), order.len(), |a, k| {
        exp(-0.5 * t[a]) * eig.eigenvectors[(a, order[k])]
    });
    Ok(ChannelSpectrum {
        eigenvalues,
        eigenvectors,
        symmetry_defect: defect,
    })
}

impl ChannelSpectrum {
    /// Eigenvector `k` as a diagonal observable.
    pub fn observable(&self, k: usize) -> DiagonalObservable {
        DiagonalObservable(self.eigenvectors.column(k).iter().copied().collect())
    }
}

/// Largest `|B(σ(A)) - γ σ(A)|` over the grid nodes, relative to
/// `max |σ(A)|`, for an eigenpair `(γ, A)` of the channel at `ξ = 0`.
/// Here `B(f) = σ(T(f))`, evaluated with the channel's own quadrature.
pub fn eigen_symbol_defect(
    product: &InvariantProduct,
    ambient: &Potential,
    grid: &QuadratureGrid,
    gamma: f64,
    a: &DiagonalObservable,
) -> Result<f64, SpectralError> {
    let sym = |x: &[f64], obs: &DiagonalObservable| -> f64 {
        let mut w = Vec::new();
        symbol_weights(product, x, &mut w);
        w.iter().zip(obs.entries()).map(|(w, a)| w * a).sum()
    };
    let values = grid.evaluate(|x| sym(x, a));
    let [t] = crate::quantization::toeplitz_many([&values], product, ambient, grid)?;
    let scale = values.iter().fold(0.0f64, |m, v| m.max(fabs(*v)));
    let worst = map_indexed(grid.len(), |i| {
        let x = grid.point(i);
        fabs(sym(x, &t) - gamma * values[i])
    })
    .into_iter()
    .fold(0.0f64, f64::max);
    Ok(worst / scale)
}

/// Legendre polynomial values and derivatives `P_0..=P_d` at `s`.
fn legendre_table(d: usize, s: f64) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; d + 1];
    let mut dv = vec![0.0; d + 1];
    v[0] = 1.0;
    if d >= 1 {
        v[1] = s;
        dv[1] = 1.0;
    }
    for k in 1..d {
        let kf = k as f64;
        v[k + 1] = ((2.0 * kf + 1.0) * s * v[k] - kf * v[k - 1]) / (kf + 1.0);
        dv[k + 1] = dv[k - 1] + (2.0 * kf + 1.0) * v[k];
    }
    (v, dv)
}

/// Galerkin eigenvalues of the weighted Laplacian at one polynomial degree.
#[derive(Clone, Debug, PartialEq)]
pub struct TzSpectrum {
    /// `λ_0 ≤ λ_1 ≤ …`, as many as requested.
    pub eigenvalues: Vec<f64>,
    pub degree: usize,
    /// Largest change of the reported eigenvalues against degree `degree - 2`.
    pub change: f64,
    pub converged: bool,
}

/// Rayleigh–Ritz eigenvalues of `f ↦ ∫ |df|² e^{θ(ξ)} ωⁿ/n!` against
/// `∫ f² e^{θ(ξ)} ωⁿ/n!` on polynomials of total degree `≤ degree` in the
/// moment coordinates `u = ∇φ`, scaled to the bounding box of `P`.
///
/// For invariant `f = b(u)`: `|df|² = ∇_u bᵀ ∇²φ ∇_u b`, and the measure is
/// `e^{⟨∇φ,ξ⟩} det ∇²φ dx`.
pub fn galerkin_eigenvalues(
    phi: &Potential,
    xi: &[f64],
    polytope: &ReflexivePolytope,
    grid: &QuadratureGrid,
    degree: usize,
    count: usize,
) -> Result<Vec<f64>, SpectralError> {
    let n = grid.dim();
    let mut lo = [f64::INFINITY; MAX_DIM];
    let mut hi = [f64::NEG_INFINITY; MAX_DIM];
    for v in polytope.vertices() {
        for d in 0..n {
            lo[d] = lo[d].min(v[d] as f64);
            hi[d] = hi[d].max(v[d] as f64);
        }
    }
    let exps: Vec<[usize; MAX_DIM]> = if n == 1 {
        (0..=degree).map(|i| [i, 0]).collect()
    } else {
        (0..=degree)
            .flat_map(|t| (0..=t).map(move |i| [i, t - i]))
            .collect()
    };
    let m = exps.len();
    struct Sample {
        weight: f64,
        hess: [[f64; MAX_DIM]; MAX_DIM],
        vals: [Vec<f64>; MAX_DIM],
        ders: [Vec<f64>; MAX_DIM],
    }
    let logs: Vec<Option<(f64, [[f64; MAX_DIM]; MAX_DIM], [f64; MAX_DIM])>> =
        map_indexed(grid.len(), |i| {
            let mut scratch = Vec::new();
            let (jet, log_det) = phi.jet_and_log_det(grid.point(i), &mut scratch);
            let theta: f64 = (0..n).map(|d| jet.grad[d] * xi[d]).sum();
            let lw = grid.log_weight(i) + theta + log_det;
            lw.is_finite().then_some((lw, jet.hess, jet.grad))
        });
    let top = logs
        .iter()
        .flatten()
        .map(|s| s.0)
        .fold(f64::NEG_INFINITY, f64::max);
    let samples: Vec<Sample> = logs
        .into_iter()
        .flatten()
        .filter(|s| s.0 > top - NODE_CUT)
        .map(|(lw, hess, grad)| {
            let mut vals: [Vec<f64>; MAX_DIM] = Default::default();
            let mut ders: [Vec<f64>; MAX_DIM] = Default::default();
            for d in 0..n {
                let scale = 2.0 / (hi[d] - lo[d]);
                let s = (grad[d] - lo[d]) * scale - 1.0;
                let (v, dv) = legendre_table(degree, s);
                vals[d] = v;
                ders[d] = dv.into_iter().map(|x| x * scale).collect();
            }
            Sample {
                weight: exp(lw - top),
                hess,
                vals,
                ders,
            }
        })
        .collect();
    let value =
        |s: &Sample, e: &[usize; MAX_DIM]| -> f64 { (0..n).map(|d| s.vals[d][e[d]]).product() };
    let gradient = |s: &Sample, e: &[usize; MAX_DIM]| -> [f64; MAX_DIM] {
        let mut g = [0.0; MAX_DIM];
        for d in 0..n {
            g[d] = (0..n)
                .map(|o| {
                    if o == d {
                        s.ders[o][e[o]]
                    } else {
                        s.vals[o][e[o]]
                    }
                })
                .product();
        }
        g
    };
    let entries: Vec<(f64, f64)> = map_indexed(m * m, |k| {
        let (i, j) = (k / m, k % m);
        if j < i {
            return (0.0, 0.0);
        }
        let (mut stiff, mut mass) = (0.0, 0.0);
        for s in &samples {
            let (gi, gj) = (gradient(s, &exps[i]), gradient(s, &exps[j]));
            let mut q = 0.0;
            for a in 0..n {
                for b in 0..n {
                    q += gi[a] * s.hess[a][b] * gj[b];
                }
            }
            stiff += s.weight * q;
            mass += s.weight * value(s, &exps[i]) * value(s, &exps[j]);
        }
        (stiff, mass)
    });
    let stiff = DMatrix::from_fn(m, m, |i, j| entries[i.min(j) * m + i.max(j)].0);
    let mass = DMatrix::from_fn(m, m, |i, j| entries[i.min(j) * m + i.max(j)].1);
    let chol = mass.cholesky().ok_or(SpectralError::SingularMass)?;
    let l = chol.l();
    // C = L⁻¹ K L⁻ᵀ
    let y = l
        .solve_lower_triangular(&stiff)
        .ok_or(SpectralError::SingularMass)?;
    let c = l
        .solve_lower_triangular(&y.transpose())
        .ok_or(SpectralError::SingularMass)?;
    let c = (&c + c.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev.truncate(count);
    Ok(ev)
}

/// Galerkin eigenvalues at `degree`, checked against `degree - 2`.
pub fn tz_spectrum(
    phi: &Potential,
    xi: &[f64],
    polytope: &ReflexivePolytope,
    grid: &QuadratureGrid,
    degree: usize,
    count: usize,
    tol: f64,
) -> Result<TzSpectrum, SpectralError> {
    let fine = galerkin_eigenvalues(phi, xi, polytope, grid, degree, count)?;
    let coarse = galerkin_eigenvalues(
        phi,
        xi,
        polytope,
        grid,
        degree.saturating_sub(2).max(1),
        count,
    )?;
    let change = fine
        .iter()
        .zip(&coarse)
        .skip(1)
        .map(|(a, b)| fabs(a - b))
        .fold(0.0, f64::max);
    Ok(TzSpectrum {
        eigenvalues: fine,
        degree,
        change,
        converged: change <= tol,
    })
}

/// One level of a gap report.
#[derive(Clone, Debug, PartialEq)]
pub struct GapRow {
    pub level: u32,
    /// Twist used for the channel and the Laplacian.
    pub xi: Vec<f64>,
    /// `γ_0 ≥ γ_1 ≥ …`.
    pub gammas: Vec<f64>,
    /// Reference eigenvalues `λ_0 ≤ λ_1 ≤ …`.
    pub lambdas: Vec<f64>,
    pub unitality_defect: f64,
    pub symmetry_defect: f64,
    /// Galerkin check of the reference eigenvalues at this metric.
    pub galerkin: TzSpectrum,
}

impl GapRow {
    /// `|1 - γ_k - λ_k/p|`.
    pub fn defect(&self, k: usize) -> f64 {
        fabs(1.0 - self.gammas[k] - self.lambdas[k] / self.level as f64)
    }
}

/// Channel spectra over several levels with defect slopes. Levels whose
/// computation failed are listed in `failures` and skipped in the fits.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumReport {
    pub rows: Vec<GapRow>,
    pub failures: Vec<(u32, String)>,
}

impl SpectrumReport {
    /// Log-log slope of the defect of eigenvalue `k` against `p`.
    pub fn slope(&self, k: usize) -> Option<f64> {
        let ps: Vec<f64> = self.rows.iter().map(|r| r.level as f64).collect();
        let ds: Vec<f64> = self.rows.iter().map(|r| r.defect(k)).collect();
        loglog_slope(&ps, &ds)
    }

    /// `max_p p² |1 - γ_k - λ_k/p|`.
    pub fn scaled_defect(&self, k: usize) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.level as f64) * (r.level as f64) * r.defect(k))
            .fold(0.0, f64::max)
    }
}

/// Twist used at each level of a gap report.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum XiPolicy {
    Zero,
    /// The quantized soliton field `ξ_p` of the level.
    Quantized,
}

/// Metric whose channel is examined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GapMetric {
    /// The reference potential of the manifold (round for the line).
    Reference,
    /// The relative balanced metric of the level, found by T-iteration.
    Balanced,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GapOptions {
    pub policy: XiPolicy,
    pub metric: GapMetric,
    /// Number of eigenvalues per row.
    pub count: usize,
    pub grid: GridOptions,
    pub flow_tolerance: f64,
    pub solver_tolerance: f64,
    /// Total polynomial degree of the Galerkin space.
    pub galerkin_degree: usize,
    /// Required agreement of the Galerkin eigenvalues under refinement.
    pub galerkin_tolerance: f64,
}

impl Default for GapOptions {
    fn default() -> Self {
        Self {
            policy: XiPolicy::Zero,
            metric: GapMetric::Reference,
            count: 4,
            grid: GridOptions::default(),
            flow_tolerance: 1e-9,
            solver_tolerance: 1e-12,
            galerkin_degree: 8,
            galerkin_tolerance: 1e-4,
        }
    }
}

/// Ambient potential, Gram product and twist of one level.
fn level_metric(
    polytope: &ReflexivePolytope,
    level: u32,
    opts: &GapOptions,
) -> Result<(Potential, InvariantProduct, Vec<f64>), SpectralError> {
    let basis = Arc::new(lattice_points(polytope, level)?);
    let xi = match opts.policy {
        XiPolicy::Zero => vec![0.0; polytope.dim()],
        XiPolicy::Quantized => solve_xi_p(&basis, opts.solver_tolerance)?
            .solution
            .as_slice()
            .to_vec(),
    };
    let ambient = match opts.metric {
        GapMetric::Reference => Potential::reference(polytope),
        GapMetric::Balanced => {
            let mut config = BalanceConfig::new(level, xi.clone());
            config.tolerance = opts.flow_tolerance;
            config.grid = opts.grid;
            let state = run_flow(polytope, &config)?;
            if !state.converged {
                return Err(BalanceError::NotConverged {
                    iterations: state.iterations,
                    residual: state.final_residual(),
                    tol: opts.flow_tolerance,
                }
                .into());
            }
            Potential::fubini_study(&twist_product(&state.product, &xi))
        }
    };
    Ok((ambient, InvariantProduct::uniform(basis), xi))
}

fn gap_row(
    polytope: &ReflexivePolytope,
    level: u32,
    opts: &GapOptions,
) -> Result<GapRow, SpectralError> {
    let (ambient, seed, xi) = level_metric(polytope, level, opts)?;
    let doubled = lattice_points(polytope, 2 * level)?;
    let grid = build_grid(&ambient, &doubled, &opts.grid)?;
    let product = gram(&ambient, seed.basis(), &grid)?;
    let channel = channel_matrix(&product, &ambient, &xi, &grid)?;
    let spectrum = channel_spectrum(&channel, opts.grid.tol)?;
    let window = build_grid(&ambient, seed.basis(), &opts.grid)?;
    let galerkin = tz_spectrum(
        &ambient,
        &xi,
        polytope,
        &window,
        opts.galerkin_degree,
        opts.count,
        opts.galerkin_tolerance,
    )?;
    let count = opts.count.min(spectrum.eigenvalues.len());
    Ok(GapRow {
        level,
        xi,
        gammas: spectrum.eigenvalues[..count].to_vec(),
        lambdas: galerkin.eigenvalues.clone(),
        unitality_defect: channel.unitality_defect(),
        symmetry_defect: spectrum.symmetry_defect,
        galerkin,
    })
}

/// Channel spectra and Galerkin reference eigenvalues at each level.
/// Rows are computed independently; a failing level is recorded and the
/// others still run.
pub fn gap_report(
    polytope: &ReflexivePolytope,
    levels: &[u32],
    opts: &GapOptions,
) -> SpectrumReport {
    let results = map_indexed(levels.len(), |i| gap_row(polytope, levels[i], opts));
    let mut report = SpectrumReport {
        rows: Vec::new(),
        failures: Vec::new(),
    };
    for (level, r) in levels.iter().zip(results) {
        match r {
            Ok(row) => report.rows.push(row),
            Err(e) => report.failures.push((*level, e.to_string())),
        }
    }
    report
}

/// `λ_k = k(k+1)/2`, the invariant spectrum of the round projective line.
pub fn round_line_eigenvalue(k: usize) -> f64 {
    (k * (k + 1)) as f64 / 2.0
}

/// Exact channel eigenvalue `γ_k` of the round projective line at level `p`:
/// `m!(m+1)! / ((m-k)!(m+k+1)!)` with `m = 2p`.
pub fn round_line_channel_eigenvalue(p: u32, k: usize) -> f64 {
    let m = 2.0 * p as f64;
    let k = k as f64;
    exp(libm::lgamma(m + 1.0) + libm::lgamma(m + 2.0)
        - libm::lgamma(m - k + 1.0)
        - libm::lgamma(m + k + 2.0))
}
