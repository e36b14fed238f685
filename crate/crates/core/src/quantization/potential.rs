use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use super::product::InvariantProduct;
use crate::math::{exp, fabs, ln_2cosh, log, tanh, LOG_PRUNE};
use crate::quadrature::{log_sum_exp_on_grid, QuadratureGrid};
use crate::toric::{ReflexivePolytope, SectionBasis, MAX_DIM};

/// Value, gradient and Hessian of a potential at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: [f64; MAX_DIM],
    pub hess: [[f64; MAX_DIM]; MAX_DIM],
}

impl Jet {
    /// Determinant of the leading `dim × dim` block of the Hessian.
    pub fn det_hessian(&self, dim: usize) -> f64 {
        if dim == 1 {
            self.hess[0][0]
        } else {
            self.hess[0][0] * self.hess[1][1] - self.hess[0][1] * self.hess[1][0]
        }
    }
}

/// Closure type for user-supplied potentials.
pub type JetFn = dyn Fn(&[f64]) -> Jet + Send + Sync;

/// Fubini–Study data `φ(x) = (1/p) ln Σ_α exp(⟨α,x⟩ - ℓ_α)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FubiniStudy {
    product: InvariantProduct,
}

impl FubiniStudy {
    pub fn product(&self) -> &InvariantProduct {
        &self.product
    }

    /// `ln Σ_α exp(⟨α,x⟩ - ℓ_α)`.
    pub fn log_partition(&self, x: &[f64]) -> f64 {
        log_partition(&self.product, x)
    }

    /// Softmax weights `w_α(x)` into `out`; returns the log-partition.
    pub fn softmax(&self, x: &[f64], out: &mut Vec<f64>) -> f64 {
        softmax_weights(&self.product, x, out)
    }
}

/// `ln Σ_α exp(⟨α,x⟩ - ℓ_α)` without allocating.
pub(crate) fn log_partition(product: &InvariantProduct, x: &[f64]) -> f64 {
    let basis = product.basis();
    let n = basis.dim();
    let coords = basis.coords_f64();
    let lw = product.log_weights();
    let t = |a: usize| -> f64 {
        let mut t = -lw[a];
        for d in 0..n {
            t += coords[a * n + d] * x[d];
        }
        t
    };
    let mut m = f64::NEG_INFINITY;
    for a in 0..lw.len() {
        m = m.max(t(a));
    }
    let mut s = 0.0;
    for a in 0..lw.len() {
        let v = t(a) - m;
        if v > -LOG_PRUNE {
            s += exp(v);
        }
    }
    m + log(s)
}

/// Softmax weights `w_α(x) ∝ exp(⟨α,x⟩ - ℓ_α)` into `out`; returns the
/// log-partition. Weights below `e^-LOG_PRUNE` relative to the largest are zero.
pub(crate) fn softmax_weights(product: &InvariantProduct, x: &[f64], out: &mut Vec<f64>) -> f64 {
    let basis = product.basis();
    let n = basis.dim();
    let coords = basis.coords_f64();
    out.clear();
    out.extend(product.log_weights().iter().enumerate().map(|(a, l)| {
        let mut t = -l;
        for d in 0..n {
            t += coords[a * n + d] * x[d];
        }
        t
    }));
    let m = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in out.iter_mut() {
        let e = *v - m;
        *v = if e > -LOG_PRUNE { exp(e) } else { 0.0 };
        s += *v;
    }
    for v in out.iter_mut() {
        *v /= s;
    }
    m + log(s)
}

/// The shape of a potential.
#[derive(Clone)]
pub enum PotentialKind {
    /// Fubini–Study potential of an invariant product.
    FubiniStudy(FubiniStudy),
    /// `2 ln(2 cosh(x/2))`, the round metric on the projective line.
    RoundCp1,
    /// Arbitrary smooth strictly convex function supplied as a closure.
    UserDefined {
        name: String,
        dim: usize,
        jet: Arc<JetFn>,
    },
}

impl fmt::Debug for PotentialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::FubiniStudy(fs) => f
                .debug_tuple("FubiniStudy")
                .field(&fs.product.level())
                .finish(),
            Self::RoundCp1 => f.write_str("RoundCp1"),
            Self::UserDefined { name, .. } => f.debug_tuple("UserDefined").field(name).finish(),
        }
    }
}

/// A smooth strictly convex torus-invariant potential `φ` on log-coordinates,
/// plus an explicit additive gauge constant.
#[derive(Clone, Debug)]
pub struct Potential {
    kind: PotentialKind,
    dim: usize,
    gauge: f64,
}

impl Potential {
    /// Fubini–Study potential of `product`.
    pub fn fubini_study(product: &InvariantProduct) -> Self {
        Self {
            dim: product.dim(),
            kind: PotentialKind::FubiniStudy(FubiniStudy {
                product: product.clone(),
            }),
            gauge: 0.0,
        }
    }

    /// The round metric on the projective line.
    pub fn round_cp1() -> Self {
        Self {
            kind: PotentialKind::RoundCp1,
            dim: 1,
            gauge: 0.0,
        }
    }

    /// `ln Σ_{v vertex} e^{⟨v,x⟩}`, the default reference metric.
    pub fn vertex_log_sum_exp(polytope: &ReflexivePolytope) -> Self {
        let points: Vec<Vec<i64>> = polytope.vertices().map(|v| v.to_vec()).collect();
        let basis = Arc::new(SectionBasis::from_points(1, polytope.dim(), points));
        Self::fubini_study(&InvariantProduct::uniform(basis))
    }

    /// Reference potential of a manifold: round for the projective line,
    /// vertex log-sum-exp otherwise.
    pub fn reference(polytope: &ReflexivePolytope) -> Self {
        if polytope.dim() == 1 {
            Self::round_cp1()
        } else {
            Self::vertex_log_sum_exp(polytope)
        }
    }

    /// A potential given by a closure returning value, gradient and Hessian.
    pub fn user_defined(name: &str, dim: usize, jet: Arc<JetFn>) -> Self {
        Self {
            kind: PotentialKind::UserDefined {
                name: name.into(),
                dim,
                jet,
            },
            dim,
            gauge: 0.0,
        }
    }

    /// The same potential plus `c`.
    pub fn with_gauge(mut self, c: f64) -> Self {
        self.gauge += c;
        self
    }

    pub fn gauge(&self) -> f64 {
        self.gauge
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    /// Short description for manifests.
    pub fn describe(&self) -> String {
        match &self.kind {
            PotentialKind::FubiniStudy(fs) => {
                alloc::format!("fubini_study(level={})", fs.product.level())
            }
            PotentialKind::RoundCp1 => "round_cp1".into(),
            PotentialKind::UserDefined { name, .. } => alloc::format!("user_defined({name})"),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let v = match &self.kind {
            PotentialKind::FubiniStudy(fs) => fs.log_partition(x) / fs.product.level() as f64,
            PotentialKind::RoundCp1 => 2.0 * ln_2cosh(0.5 * x[0]),
            PotentialKind::UserDefined { jet, .. } => jet(x).value,
        };
        v + self.gauge
    }

    /// Values at every node of `grid`, in node order.
    pub fn values_on(&self, grid: &QuadratureGrid) -> Vec<f64> {
        match &self.kind {
            PotentialKind::FubiniStudy(fs) => {
                let basis = fs.product.basis();
                let offsets: Vec<f64> = fs.product.log_weights().iter().map(|l| -l).collect();
                let p = fs.product.level() as f64;
                log_sum_exp_on_grid(grid, basis.coords_f64(), &offsets)
                    .into_iter()
                    .map(|v| v / p + self.gauge)
                    .collect()
            }
            _ => grid.evaluate(|x| self.value(x)),
        }
    }

    pub fn jet(&self, x: &[f64]) -> Jet {
        let mut j = match &self.kind {
            PotentialKind::FubiniStudy(fs) => fs_jet(fs, x, &mut Vec::new()),
            PotentialKind::RoundCp1 => {
                let t = tanh(0.5 * x[0]);
                Jet {
                    value: 2.0 * ln_2cosh(0.5 * x[0]),
                    grad: [t, 0.0],
                    hess: [[0.5 * (1.0 - t) * (1.0 + t), 0.0], [0.0, 0.0]],
                }
            }
            PotentialKind::UserDefined { jet, .. } => jet(x),
        };
        j.value += self.gauge;
        j
    }

    /// `ln det ∇²φ(x)`, evaluated without cancellation for Fubini–Study
    /// potentials far out in the tails.
    pub fn log_det_hessian(&self, x: &[f64]) -> f64 {
        match &self.kind {
            PotentialKind::FubiniStudy(fs) => fs_log_det(fs, x, &mut Vec::new()),
            PotentialKind::RoundCp1 => core::f64::consts::LN_2 - 2.0 * ln_2cosh(0.5 * x[0]),
            PotentialKind::UserDefined { .. } => log(self.jet(x).det_hessian(self.dim)),
        }
    }

    /// Jet and log-determinant together, reusing a scratch buffer.
    pub fn jet_and_log_det(&self, x: &[f64], scratch: &mut Vec<f64>) -> (Jet, f64) {
        match &self.kind {
            PotentialKind::FubiniStudy(fs) => {
                let mut j = fs_jet(fs, x, scratch);
                j.value += self.gauge;
                let ld = fs_log_det_from_weights(fs, &j, scratch);
                (j, ld)
            }
            _ => (self.jet(x), self.log_det_hessian(x)),
        }
    }
}

fn fs_jet(fs: &FubiniStudy, x: &[f64], w: &mut Vec<f64>) -> Jet {
    let basis = fs.product.basis();
    let n = basis.dim();
    let p = fs.product.level() as f64;
    let lp = fs.softmax(x, w);
    let coords = basis.coords_f64();
    let mut mean = [0.0; MAX_DIM];
    for (a, wa) in w.iter().enumerate() {
        for d in 0..n {
            mean[d] += wa * coords[a * n + d];
        }
    }
    let mut cov = [[0.0; MAX_DIM]; MAX_DIM];
    for (a, wa) in w.iter().enumerate() {
        if *wa == 0.0 {
            continue;
        }
        let c0 = coords[a * n] - mean[0];
        let c1 = if n == 2 {
            coords[a * n + 1] - mean[1]
        } else {
            0.0
        };
        cov[0][0] += wa * c0 * c0;
        cov[0][1] += wa * c0 * c1;
        cov[1][1] += wa * c1 * c1;
    }
    cov[1][0] = cov[0][1];
    let mut j = Jet {
        value: lp / p,
        grad: [mean[0] / p, mean[1] / p],
        hess: [[0.0; 2]; 2],
    };
    for r in 0..2 {
        for c in 0..2 {
            j.hess[r][c] = cov[r][c] / p;
        }
    }
    j
}

/// `ln det ∇²φ` given the softmax weights left in `w` by [`fs_jet`].
fn fs_log_det_from_weights(fs: &FubiniStudy, j: &Jet, w: &[f64]) -> f64 {
    let basis = fs.product.basis();
    let n = basis.dim();
    let p = fs.product.level() as f64;
    if n == 1 {
        return log(j.hess[0][0]);
    }
    let naive = j.det_hessian(2);
    let scale = j.hess[0][0] * j.hess[1][1];
    if naive > 1e-4 * scale {
        return log(naive);
    }
    // Nearly rank-one covariance: use the Lagrange identity
    // det Σ w a aᵀ = Σ_{β<γ} w_β w_γ (a_β × a_γ)², all terms non-negative.
    let coords = basis.coords_f64();
    let m = [j.grad[0] * p, j.grad[1] * p];
    let active: Vec<usize> = (0..w.len()).filter(|&a| w[a] > 0.0).collect();
    let mut det = 0.0;
    for (k, &b) in active.iter().enumerate() {
        let ab = [coords[2 * b] - m[0], coords[2 * b + 1] - m[1]];
        let mut row = 0.0;
        for &g in &active[k + 1..] {
            // (a_β) × (a_γ - a_β) keeps the exact integer difference.
            let d = [
                coords[2 * g] - coords[2 * b],
                coords[2 * g + 1] - coords[2 * b + 1],
            ];
            let cr = ab[0] * d[1] - ab[1] * d[0];
            row += w[g] * cr * cr;
        }
        det += w[b] * row;
    }
    log(fabs(det)) - 2.0 * log(p)
}

fn fs_log_det(fs: &FubiniStudy, x: &[f64], w: &mut Vec<f64>) -> f64 {
    let j = fs_jet(fs, x, w);
    fs_log_det_from_weights(fs, &j, w)
}
