//! Tensor Gauss–Legendre quadrature on a truncated box in log-coordinates,
//! with log-domain (max-shifted) summation.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::QuadratureError;
use crate::math::{asinh, cosh, exp, fabs, log, sinh, LOG_PRUNE};
use crate::parallel::{map_indexed, max_indexed, sum_indexed};
use crate::quantization::Potential;
use crate::toric::{SectionBasis, MAX_DIM};

/// `P_m(x)` and `P_m'(x)` by the three-term recurrence.
fn legendre(m: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    (p1, m as f64 * (x * p1 - p0) / (x * x - 1.0))
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1, "Gauss–Legendre order must be positive");
    if m == 1 {
        return (vec![0.0], vec![2.0]);
    }
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut x = libm::cos(core::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5));
        for _ in 0..100 {
            let (p, dp) = legendre(m, x);
            let dx = p / dp;
            x -= dx;
            if fabs(dx) < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(m, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[m - 1 - i] = x;
        nodes[i] = -x;
        weights[m - 1 - i] = w;
        weights[i] = w;
    }
    (nodes, weights)
}

/// How reference nodes on `[-1, 1]` are placed in each box interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AxisMap {
    /// Plain affine map onto `[lower, upper]`.
    Affine,
    /// `x = center + scale·sinh(t)` with Gauss–Legendre nodes uniform in `t`;
    /// concentrates nodes where the integrands peak and thins the tails.
    Sinh { center: f64, scale: f64 },
    /// `x = center + scale·sinh(t)` with equally spaced midpoint nodes in `t`.
    /// Spectrally accurate when the integrand is negligible at both ends.
    SinhMidpoint { center: f64, scale: f64 },
}

/// Strategy for [`build_grid`] to choose an [`AxisMap`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mapping {
    Affine,
    Sinh,
    SinhMidpoint,
}

/// A tensor-product quadrature rule on a box in `ℝⁿ`, `n ∈ {1, 2}`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureGrid {
    dim: usize,
    order: usize,
    lower: f64,
    upper: f64,
    map: AxisMap,
    axis_nodes: Vec<f64>,
    axis_weights: Vec<f64>,
    points: Vec<f64>,
    log_weights: Vec<f64>,
    error_estimate: f64,
    error_history: Vec<f64>,
}

impl QuadratureGrid {
    /// Tensor rule of `order` nodes per axis on the cube `[lower, upper]^dim`.
    pub fn tensor(dim: usize, lower: f64, upper: f64, order: usize, map: AxisMap) -> Self {
        assert!((1..=MAX_DIM).contains(&dim) && upper > lower);
        let (t, w) = gauss_legendre(order);
        let (axis_nodes, axis_weights): (Vec<f64>, Vec<f64>) = match map {
            AxisMap::Affine => {
                let (mid, half) = (0.5 * (lower + upper), 0.5 * (upper - lower));
                t.iter()
                    .zip(&w)
                    .map(|(t, w)| (mid + half * t, half * w))
                    .unzip()
            }
            AxisMap::Sinh { center, scale } => {
                let ta = asinh((lower - center) / scale);
                let tb = asinh((upper - center) / scale);
                let (mid, half) = (0.5 * (ta + tb), 0.5 * (tb - ta));
                t.iter()
                    .zip(&w)
                    .map(|(t, w)| {
                        let tau = mid + half * t;
                        (center + scale * sinh(tau), half * w * scale * cosh(tau))
                    })
                    .unzip()
            }
            AxisMap::SinhMidpoint { center, scale } => {
                let ta = asinh((lower - center) / scale);
                let tb = asinh((upper - center) / scale);
                let h = (tb - ta) / order as f64;
                (0..order)
                    .map(|k| {
                        let tau = ta + (k as f64 + 0.5) * h;
                        (center + scale * sinh(tau), h * scale * cosh(tau))
                    })
                    .unzip()
            }
        };
        let n_total = order.pow(dim as u32);
        let mut points = Vec::with_capacity(n_total * dim);
        let mut log_weights = Vec::with_capacity(n_total);
        if dim == 1 {
            points.extend_from_slice(&axis_nodes);
            log_weights.extend(axis_weights.iter().map(|w| log(*w)));
        } else {
            for i in 0..order {
                for j in 0..order {
                    points.push(axis_nodes[i]);
                    points.push(axis_nodes[j]);
                    log_weights.push(log(axis_weights[i]) + log(axis_weights[j]));
                }
            }
        }
        Self {
            dim,
            order,
            lower,
            upper,
            map,
            axis_nodes,
            axis_weights,
            points,
            log_weights,
            error_estimate: f64::INFINITY,
            error_history: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Nodes per axis.
    pub fn order(&self) -> usize {
        self.order
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    /// The truncation box `[lower, upper]` (same on every axis).
    pub fn bounds(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    pub fn map(&self) -> AxisMap {
        self.map
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn log_weight(&self, i: usize) -> f64 {
        self.log_weights[i]
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn axis_nodes(&self) -> &[f64] {
        &self.axis_nodes
    }

    pub fn axis_weights(&self) -> &[f64] {
        &self.axis_weights
    }

    /// Self-reported relative error from the last refinement step.
    pub fn error_estimate(&self) -> f64 {
        self.error_estimate
    }

    /// Error estimates of every refinement step, in order.
    pub fn error_history(&self) -> &[f64] {
        &self.error_history
    }

    /// Same box and map, twice the order per axis.
    pub fn refined(&self) -> Self {
        Self::tensor(self.dim, self.lower, self.upper, 2 * self.order, self.map)
    }

    /// The grid moved by `delta` along the diagonal.
    pub fn translated(&self, delta: f64) -> Self {
        let map = match self.map {
            AxisMap::Affine => AxisMap::Affine,
            AxisMap::Sinh { center, scale } => AxisMap::Sinh {
                center: center + delta,
                scale,
            },
            AxisMap::SinhMidpoint { center, scale } => AxisMap::SinhMidpoint {
                center: center + delta,
                scale,
            },
        };
        Self::tensor(
            self.dim,
            self.lower + delta,
            self.upper + delta,
            self.order,
            map,
        )
    }

    /// Evaluates `f` at every node, in node order.
    pub fn evaluate<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&[f64]) -> T + Sync + Send,
    {
        map_indexed(self.len(), |i| f(self.point(i)))
    }
}

/// A real number `mantissa · e^shift`, see [`crate::math::Scaled`].
pub use crate::math::Scaled;

/// `∫ f e^{g} dx` for node values `g` (log-integrand) and optional signed `f`.
///
/// The largest term is factored out before exponentiating; terms more than
/// `LOG_PRUNE` below it are dropped.
pub fn integrate_scaled(
    grid: &QuadratureGrid,
    log_values: &[f64],
    factor: Option<&[f64]>,
) -> Scaled {
    let lw = grid.log_weights();
    let shift = max_indexed(grid.len(), &|i| log_values[i] + lw[i]);
    if !shift.is_finite() {
        return Scaled {
            shift: f64::NEG_INFINITY,
            mantissa: 0.0,
        };
    }
    let mantissa = sum_indexed(grid.len(), &|i| {
        let t = log_values[i] + lw[i] - shift;
        if t < -LOG_PRUNE {
            return 0.0;
        }
        let e = exp(t);
        match factor {
            Some(f) => f[i] * e,
            None => e,
        }
    });
    Scaled { shift, mantissa }
}

/// `ln ∫ e^{log_f(x)} dx`; `-inf` when `log_f` is `-inf` everywhere.
pub fn integrate_log<F>(grid: &QuadratureGrid, log_f: F) -> f64
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let values = grid.evaluate(log_f);
    integrate_scaled(grid, &values, None).ln()
}

/// Sums `Σ_i w_i e^{⟨α, x_i⟩ + base_i}` (and the same with extra per-node
/// factors) for one exponent `α`, sharing a single shift.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TiltedSums<const K: usize> {
    pub shift: f64,
    pub plain: f64,
    pub weighted: [f64; K],
}

impl<const K: usize> TiltedSums<K> {
    /// `ln` of the unweighted integral.
    pub fn ln(&self) -> f64 {
        self.shift + log(self.plain)
    }

    /// Weighted integral `k` divided by the unweighted one.
    pub fn ratio(&self, k: usize) -> f64 {
        self.weighted[k] / self.plain
    }
}

fn pairwise_array<const K: usize, F>(lo: usize, hi: usize, term: &F) -> (f64, [f64; K])
where
    F: Fn(usize) -> (f64, [f64; K]),
{
    if hi - lo <= 32 {
        let mut s = 0.0;
        let mut a = [0.0; K];
        for i in lo..hi {
            let (t, v) = term(i);
            s += t;
            for k in 0..K {
                a[k] += v[k];
            }
        }
        return (s, a);
    }
    let mid = lo + (hi - lo) / 2;
    let (s1, a1) = pairwise_array(lo, mid, term);
    let (s2, mut a2) = pairwise_array(mid, hi, term);
    for k in 0..K {
        a2[k] += a1[k];
    }
    (s1 + s2, a2)
}

/// For every exponent `α` (rows of `exponents`, `dim` columns) computes
/// `∫ e^{⟨α,x⟩ + base(x)} dx` and `∫ f_k e^{⟨α,x⟩ + base(x)} dx`.
///
/// On a two-dimensional grid the tensor structure is used: `e^{⟨α,x⟩}`
/// factors over the axes, so the inner axis is summed once per distinct
/// second coordinate and the outer axis once per exponent. Every sum is
/// serial with a fixed reduction tree.
pub fn tilted_sums<const K: usize>(
    grid: &QuadratureGrid,
    base: &[f64],
    exponents: &[f64],
    factors: [&[f64]; K],
) -> Vec<TiltedSums<K>> {
    if grid.dim() == 2 {
        return tilted_sums_tensor(grid, base, exponents, factors);
    }
    let count = exponents.len();
    let lw = grid.log_weights();
    let xs = grid.axis_nodes();
    map_indexed(count, |a| {
        let alpha = exponents[a];
        weighted_log_sum(xs.len(), &|i| alpha * xs[i] + base[i] + lw[i], &|i, e| {
            let mut v = [0.0; K];
            for k in 0..K {
                v[k] = factors[k][i] * e;
            }
            (e, v)
        })
    })
}

/// `Σ_i g(i, e^{t(i) - shift})` with `shift = max t`, dropping pruned terms.
fn weighted_log_sum<const K: usize, T, G>(len: usize, t: &T, g: &G) -> TiltedSums<K>
where
    T: Fn(usize) -> f64,
    G: Fn(usize, f64) -> (f64, [f64; K]),
{
    let mut shift = f64::NEG_INFINITY;
    for i in 0..len {
        shift = shift.max(t(i));
    }
    if !shift.is_finite() {
        return TiltedSums {
            shift,
            plain: 0.0,
            weighted: [0.0; K],
        };
    }
    let (plain, weighted) = pairwise_array(0, len, &|i| {
        let u = t(i) - shift;
        if u < -LOG_PRUNE {
            return (0.0, [0.0; K]);
        }
        g(i, exp(u))
    });
    TiltedSums {
        shift,
        plain,
        weighted,
    }
}

/// Sorted distinct values of column `d` of a row-major `dim`-column table.
fn distinct_column(values: &[f64], dim: usize, d: usize) -> Vec<f64> {
    let mut col: Vec<f64> = values.chunks(dim).map(|r| r[d]).collect();
    col.sort_by(f64::total_cmp);
    col.dedup();
    col
}

fn column_index(cols: &[f64], v: f64) -> usize {
    cols.binary_search_by(|c| c.total_cmp(&v))
        .expect("value taken from the same table")
}

fn tilted_sums_tensor<const K: usize>(
    grid: &QuadratureGrid,
    base: &[f64],
    exponents: &[f64],
    factors: [&[f64]; K],
) -> Vec<TiltedSums<K>> {
    let m = grid.order();
    let xs = grid.axis_nodes();
    let lw: Vec<f64> = grid.axis_weights().iter().map(|w| log(*w)).collect();
    let cols = distinct_column(exponents, 2, 1);
    // rows[i][c]: sum over the second axis at first-axis node i, second exponent cols[c].
    let rows: Vec<Vec<TiltedSums<K>>> = map_indexed(m, |i| {
        let row = i * m;
        cols.iter()
            .map(|&a2| {
                weighted_log_sum(m, &|j| a2 * xs[j] + base[row + j] + lw[j], &|j, e| {
                    let mut v = [0.0; K];
                    for k in 0..K {
                        v[k] = factors[k][row + j] * e;
                    }
                    (e, v)
                })
            })
            .collect()
    });
    map_indexed(exponents.len() / 2, |a| {
        let a1 = exponents[2 * a];
        let c = column_index(&cols, exponents[2 * a + 1]);
        weighted_log_sum(m, &|i| a1 * xs[i] + lw[i] + rows[i][c].shift, &|i, e| {
            let r = &rows[i][c];
            let mut v = [0.0; K];
            for k in 0..K {
                v[k] = r.weighted[k] * e;
            }
            (r.plain * e, v)
        })
    })
}

/// `ln Σ_α e^{⟨α,x⟩ + offset_α}` at every node of `grid`, in node order.
///
/// Two-dimensional grids use the same axis factorisation as [`tilted_sums`].
pub fn log_sum_exp_on_grid(grid: &QuadratureGrid, exponents: &[f64], offsets: &[f64]) -> Vec<f64> {
    let n = grid.dim();
    let xs = grid.axis_nodes();
    let lse = |len: usize, t: &dyn Fn(usize) -> f64| -> f64 {
        let mut mx = f64::NEG_INFINITY;
        for k in 0..len {
            mx = mx.max(t(k));
        }
        if !mx.is_finite() {
            return mx;
        }
        let mut s = 0.0;
        for k in 0..len {
            let u = t(k) - mx;
            if u > -LOG_PRUNE {
                s += exp(u);
            }
        }
        mx + log(s)
    };
    if n == 1 {
        return map_indexed(xs.len(), |i| {
            lse(offsets.len(), &|a| exponents[a] * xs[i] + offsets[a])
        });
    }
    let m = grid.order();
    let cols = distinct_column(exponents, 2, 1);
    let mut groups: Vec<Vec<(f64, f64)>> = vec![Vec::new(); cols.len()];
    for (a, off) in offsets.iter().enumerate() {
        groups[column_index(&cols, exponents[2 * a + 1])].push((exponents[2 * a], *off));
    }
    // inner[i][c] = ln Σ_{α₂ = cols[c]} e^{α₁ x_i + offset_α}
    let inner: Vec<Vec<f64>> = map_indexed(m, |i| {
        groups
            .iter()
            .map(|g| lse(g.len(), &|k| g[k].0 * xs[i] + g[k].1))
            .collect()
    });
    let rows: Vec<Vec<f64>> = map_indexed(m, |i| {
        let li = &inner[i];
        (0..m)
            .map(|j| lse(cols.len(), &|c| cols[c] * xs[j] + li[c]))
            .collect()
    });
    rows.concat()
}

/// Tuning knobs for [`build_grid`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridOptions {
    /// Stop once doubling the order changes every log-integral by at most this.
    pub tol: f64,
    /// Hard cap on nodes per axis.
    pub max_order: usize,
    /// Order of the first grid tried.
    pub initial_order: usize,
    pub mapping: Mapping,
    /// Width of the central region resolved uniformly by the sinh maps;
    /// `None` picks 1 on a line and 5 on a plane.
    pub sinh_scale: Option<f64>,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_order: 1 << 14,
            initial_order: 16,
            mapping: Mapping::SinhMidpoint,
            sinh_scale: None,
        }
    }
}

/// Log-mass below the peak that the box boundary must clear.
pub const LOG_MASS_CUT: f64 = 46.0;
/// Extra safety margin on sampled boundary values.
const BOUNDARY_MARGIN: f64 = 4.0;
/// Samples per box face in two dimensions.
const FACE_SAMPLES: usize = 129;

/// Maximiser and maximum of `⟨α,x⟩ - c·φ(x)` by damped Newton.
fn peak(phi: &Potential, alpha: &[f64], c: f64, start: &[f64]) -> ([f64; MAX_DIM], f64) {
    let n = alpha.len();
    let g = |x: &[f64]| -> f64 { (0..n).map(|d| alpha[d] * x[d]).sum::<f64>() - c * phi.value(x) };
    let mut x = [0.0; MAX_DIM];
    x[..n].copy_from_slice(start);
    let mut gx = g(&x[..n]);
    for _ in 0..200 {
        let jet = phi.jet(&x[..n]);
        let r: [f64; 2] = [
            alpha[0] - c * jet.grad[0],
            if n == 2 {
                alpha[1] - c * jet.grad[1]
            } else {
                0.0
            },
        ];
        let step = if n == 1 {
            [r[0] / (c * jet.hess[0][0]), 0.0]
        } else {
            let (a, b, d) = (c * jet.hess[0][0], c * jet.hess[0][1], c * jet.hess[1][1]);
            let det = a * d - b * b;
            [(d * r[0] - b * r[1]) / det, (a * r[1] - b * r[0]) / det]
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let mut y = x;
            for d in 0..n {
                y[d] += t * step[d];
            }
            let gy = g(&y[..n]);
            if gy.is_finite() && gy >= gx {
                x = y;
                gx = gy;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        let norm = (0..n).map(|d| fabs(t * step[d])).fold(0.0, f64::max);
        if !accepted || norm < 1e-12 {
            break;
        }
    }
    (x, gx)
}

/// Chooses a truncation box and a per-axis order such that every integral
/// `∫ e^{⟨α,x⟩ - (p+1)φ(x)} dx`, `α` in `basis`, is resolved to `opts.tol`.
///
/// The box is enlarged until each integrand is below `e^-46` times its peak
/// on the boundary; the order is then doubled until two successive grids
/// agree on every log-integral to `opts.tol`, and the finer of the two is
/// returned.
pub fn build_grid(
    phi: &Potential,
    basis: &SectionBasis,
    opts: &GridOptions,
) -> Result<QuadratureGrid, QuadratureError> {
    let n = basis.dim();
    if phi.dim() != n {
        return Err(QuadratureError::DimensionMismatch {
            grid: phi.dim(),
            input: n,
        });
    }
    let c = basis.level() as f64 + 1.0;
    let count = basis.len();
    let peaks: Vec<([f64; MAX_DIM], f64)> = map_indexed(count, |a| {
        peak(phi, basis.point_f64(a), c, &[0.0; MAX_DIM][..n])
    });
    let mut lo = [f64::INFINITY; MAX_DIM];
    let mut hi = [f64::NEG_INFINITY; MAX_DIM];
    for (x, v) in &peaks {
        if !v.is_finite() {
            return Err(QuadratureError::NonFinite);
        }
        for d in 0..n {
            lo[d] = lo[d].min(x[d]);
            hi[d] = hi[d].max(x[d]);
        }
    }
    let peak_lo = lo[..n].iter().copied().fold(f64::INFINITY, f64::min);
    let peak_hi = hi[..n].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for d in 0..n {
        lo[d] -= 2.0;
        hi[d] += 2.0;
    }

    // Largest excess of any integrand over (its peak - cut) on a face.
    let excess = |x: &[f64]| -> f64 {
        let v = phi.value(x);
        let mut worst = f64::NEG_INFINITY;
        for (a, (_, pv)) in peaks.iter().enumerate() {
            let alpha = basis.point_f64(a);
            let g = (0..n).map(|d| alpha[d] * x[d]).sum::<f64>() - c * v;
            worst = worst.max(g - pv);
        }
        worst + LOG_MASS_CUT + BOUNDARY_MARGIN
    };
    let mut rounds = 0;
    loop {
        let mut grew = false;
        for d in 0..n {
            for side in 0..2 {
                let coord = if side == 0 { lo[d] } else { hi[d] };
                let samples: Vec<f64> = if n == 1 {
                    vec![excess(&[coord])]
                } else {
                    let o = 1 - d;
                    map_indexed(FACE_SAMPLES, |k| {
                        let s = lo[o] + (hi[o] - lo[o]) * k as f64 / (FACE_SAMPLES - 1) as f64;
                        let mut x = [0.0; 2];
                        x[d] = coord;
                        x[o] = s;
                        excess(&x)
                    })
                };
                let worst = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if !(worst < 0.0) {
                    let step = 2.0f64.max(0.1 * (hi[d] - lo[d]));
                    if side == 0 {
                        lo[d] -= step;
                    } else {
                        hi[d] += step;
                    }
                    grew = true;
                }
            }
        }
        if !grew {
            break;
        }
        rounds += 1;
        if rounds > 200 {
            return Err(QuadratureError::BoxNotFound(hi[0] - lo[0]));
        }
    }
    let lower = lo[..n].iter().copied().fold(f64::INFINITY, f64::min);
    let upper = hi[..n].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = opts.sinh_scale.unwrap_or(if n == 1 { 1.0 } else { 5.0 });
    let map = match opts.mapping {
        Mapping::Affine => AxisMap::Affine,
        Mapping::Sinh => AxisMap::Sinh {
            center: 0.5 * (peak_lo + peak_hi),
            scale,
        },
        Mapping::SinhMidpoint => AxisMap::SinhMidpoint {
            center: 0.5 * (peak_lo + peak_hi),
            scale,
        },
    };

    let log_integrals = |grid: &QuadratureGrid| -> Vec<f64> {
        let base: Vec<f64> = phi.values_on(grid).into_iter().map(|v| -c * v).collect();
        tilted_sums(grid, &base, basis.coords_f64(), [])
            .iter()
            .map(|s| s.ln())
            .collect()
    };
    let mut order = opts.initial_order.max(2);
    let mut grid = QuadratureGrid::tensor(n, lower, upper, order, map);
    let mut current = log_integrals(&grid);
    let mut history = Vec::new();
    loop {
        let next_order = 2 * order;
        if next_order > opts.max_order {
            let change = history.last().copied().unwrap_or(f64::INFINITY);
            return Err(QuadratureError::RefinementFailed {
                order: next_order,
                cap: opts.max_order,
                change,
                tol: opts.tol,
            });
        }
        let finer = QuadratureGrid::tensor(n, lower, upper, next_order, map);
        let next = log_integrals(&finer);
        let change = current
            .iter()
            .zip(&next)
            .map(|(a, b)| {
                if a.is_finite() && b.is_finite() {
                    fabs(a - b)
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max);
        history.push(change);
        grid = finer;
        if change <= opts.tol {
            break;
        }
        current = next;
        order = next_order;
    }
    grid.error_estimate = *history.last().unwrap();
    grid.error_history = history;
    Ok(grid)
}
