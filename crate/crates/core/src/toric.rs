//! Toric Fano manifolds as reflexive polytopes `P = { u : ⟨u, v_i⟩ ≥ -1 }`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::error::GeometryError;
use crate::math::{exp, fabs};
use crate::quadrature::gauss_legendre;

/// Maximum supported complex dimension.
pub const MAX_DIM: usize = 2;

/// Names accepted by [`ReflexivePolytope::preset`], in catalog order.
pub const PRESET_NAMES: [&str; 6] = ["CP1", "CP2", "CP1xCP1", "dP8", "dP7", "dP6"];

/// The anticanonical polytope of a toric Fano curve or surface.
#[derive(Clone, Debug, PartialEq)]
pub struct ReflexivePolytope {
    name: String,
    dim: usize,
    /// Primitive inward facet normals, counter-clockwise for `dim == 2`.
    normals: Vec<[i64; MAX_DIM]>,
    /// Vertices, counter-clockwise for `dim == 2`.
    vertices: Vec<[i64; MAX_DIM]>,
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

fn not_reflexive(name: &str, reason: impl Into<String>) -> GeometryError {
    GeometryError::NotReflexive {
        name: name.to_string(),
        reason: reason.into(),
    }
}

impl ReflexivePolytope {
    /// One of the built-in toric Fano manifolds; see [`PRESET_NAMES`].
    pub fn preset(name: &str) -> Result<Self, GeometryError> {
        let canonical = PRESET_NAMES
            .iter()
            .find(|n| n.eq_ignore_ascii_case(name))
            .ok_or_else(|| GeometryError::UnknownPreset(name.to_string()))?;
        let normals: &[[i64; 2]] = match *canonical {
            "CP1" => return Self::from_normals("CP1", 1, &[[1, 0], [-1, 0]]),
            "CP2" => &[[1, 0], [0, 1], [-1, -1]],
            "CP1xCP1" => &[[1, 0], [0, 1], [-1, 0], [0, -1]],
            "dP8" => &[[1, 0], [0, 1], [-1, -1], [1, 1]],
            "dP7" => &[[1, 0], [1, 1], [0, 1], [-1, 0], [-1, -1]],
            "dP6" => &[[1, 0], [1, 1], [0, 1], [-1, 0], [-1, -1], [0, -1]],
            _ => unreachable!(),
        };
        Self::from_normals(canonical, 2, normals)
    }

    /// Builds `P` from its facet normals, deriving and validating the vertices.
    ///
    /// For `dim == 1` only the first component of each normal is used.
    pub fn from_normals(
        name: &str,
        dim: usize,
        normals: &[[i64; 2]],
    ) -> Result<Self, GeometryError> {
        match dim {
            1 => Self::from_normals_1d(name, normals),
            2 => Self::from_normals_2d(name, normals),
            d => Err(GeometryError::UnsupportedDimension(d)),
        }
    }

    fn from_normals_1d(name: &str, normals: &[[i64; 2]]) -> Result<Self, GeometryError> {
        let mut ns: Vec<i64> = normals.iter().map(|v| v[0]).collect();
        ns.sort_unstable();
        ns.dedup();
        if ns != [-1, 1] || normals.len() != 2 {
            return Err(not_reflexive(
                name,
                "a reflexive interval has normals exactly {-1, +1}",
            ));
        }
        Ok(Self {
            name: name.to_string(),
            dim: 1,
            normals: vec![[1, 0], [-1, 0]],
            vertices: vec![[-1, 0], [1, 0]],
        })
    }

    fn from_normals_2d(name: &str, normals: &[[i64; 2]]) -> Result<Self, GeometryError> {
        if normals.len() < 3 {
            return Err(not_reflexive(name, "fewer than three facets"));
        }
        for v in normals {
            if gcd(v[0], v[1]) != 1 {
                return Err(not_reflexive(
                    name,
                    format!("normal {v:?} is not primitive"),
                ));
            }
        }
        let mut sorted: Vec<[i64; 2]> = normals.to_vec();
        sorted.sort_by(|a, b| {
            let ta = libm::atan2(a[1] as f64, a[0] as f64);
            let tb = libm::atan2(b[1] as f64, b[0] as f64);
            ta.partial_cmp(&tb).unwrap()
        });
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                return Err(not_reflexive(name, "repeated facet normal"));
            }
        }
        let k = sorted.len();
        let mut vertices = Vec::with_capacity(k);
        for i in 0..k {
            let a = sorted[i];
            let b = sorted[(i + 1) % k];
            // Consecutive normals must turn strictly left by less than π.
            let det = a[0] * b[1] - a[1] * b[0];
            if det <= 0 {
                return Err(not_reflexive(
                    name,
                    "normals do not positively span the plane",
                ));
            }
            // Solve <u,a> = -1, <u,b> = -1.
            let ux = -b[1] + a[1];
            let uy = b[0] - a[0];
            if ux % det != 0 || uy % det != 0 {
                return Err(not_reflexive(name, "non-integral vertex"));
            }
            vertices.push([ux / det, uy / det]);
        }
        // Each normal must support an actual edge: neighbours' vertices differ
        // and all constraints hold at every vertex.
        for u in &vertices {
            for v in &sorted {
                if u[0] * v[0] + u[1] * v[1] < -1 {
                    return Err(not_reflexive(name, "redundant facet normal"));
                }
            }
        }
        for i in 0..k {
            if vertices[i] == vertices[(i + 1) % k] {
                return Err(not_reflexive(name, "redundant facet normal"));
            }
        }
        Ok(Self {
            name: name.to_string(),
            dim: 2,
            normals: sorted,
            vertices,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Facet normals, truncated to `dim` components.
    pub fn normals(&self) -> impl Iterator<Item = &[i64]> + '_ {
        self.normals.iter().map(move |v| &v[..self.dim])
    }

    /// Vertices, truncated to `dim` components.
    pub fn vertices(&self) -> impl Iterator<Item = &[i64]> + '_ {
        self.vertices.iter().map(move |v| &v[..self.dim])
    }

    /// Lebesgue volume of `P`.
    pub fn volume(&self) -> f64 {
        if self.dim == 1 {
            return 2.0;
        }
        let k = self.vertices.len();
        let twice: i64 = (0..k)
            .map(|i| {
                let a = self.vertices[i];
                let b = self.vertices[(i + 1) % k];
                a[0] * b[1] - a[1] * b[0]
            })
            .sum();
        twice as f64 / 2.0
    }

    /// Whether `u` satisfies every facet inequality of `level · P`.
    pub fn contains_scaled(&self, u: &[f64], level: f64) -> bool {
        self.normals()
            .all(|v| v.iter().zip(u).map(|(a, b)| *a as f64 * b).sum::<f64>() >= -level)
    }

    /// Cones from the origin over the boundary, as lists of `dim` vertices.
    fn cones(&self) -> Vec<[[f64; MAX_DIM]; MAX_DIM]> {
        let k = self.vertices.len();
        let f = |v: [i64; 2]| [v[0] as f64, v[1] as f64];
        if self.dim == 1 {
            return vec![
                [f(self.vertices[0]), [0.0; 2]],
                [f(self.vertices[1]), [0.0; 2]],
            ];
        }
        (0..k)
            .map(|i| [f(self.vertices[i]), f(self.vertices[(i + 1) % k])])
            .collect()
    }
}

/// The lattice points of `p·P`, i.e. the monomial basis of sections at level `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct SectionBasis {
    level: u32,
    dim: usize,
    coords: Vec<i64>,
    coords_f64: Vec<f64>,
}

impl SectionBasis {
    /// Builds a basis from explicit points, sorting them lexicographically.
    pub fn from_points(level: u32, dim: usize, mut points: Vec<Vec<i64>>) -> Self {
        points.sort();
        points.dedup();
        let coords: Vec<i64> = points.iter().flat_map(|p| p.iter().copied()).collect();
        let coords_f64 = coords.iter().map(|&c| c as f64).collect();
        Self {
            level,
            dim,
            coords,
            coords_f64,
        }
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of sections `n_p`.
    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[i64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn point_f64(&self, i: usize) -> &[f64] {
        &self.coords_f64[i * self.dim..(i + 1) * self.dim]
    }

    /// All coordinates, row-major `n_p × dim`.
    pub fn coords_f64(&self) -> &[f64] {
        &self.coords_f64
    }

    pub fn points(&self) -> impl Iterator<Item = &[i64]> + '_ {
        self.coords.chunks(self.dim)
    }

    /// Index of `alpha`, if it belongs to the basis.
    pub fn index_of(&self, alpha: &[i64]) -> Option<usize> {
        self.coords.chunks(self.dim).position(|p| p == alpha)
    }

    /// `⟨α_i, ξ⟩`.
    pub fn pairing(&self, i: usize, xi: &[f64]) -> f64 {
        self.point_f64(i).iter().zip(xi).map(|(a, b)| a * b).sum()
    }
}

/// Enumerates `p·P ∩ ℤⁿ` in lexicographic order.
pub fn lattice_points(
    polytope: &ReflexivePolytope,
    level: u32,
) -> Result<SectionBasis, GeometryError> {
    if level == 0 {
        return Err(GeometryError::InvalidLevel(0));
    }
    let p = level as i64;
    let n = polytope.dim();
    let mut lo = [0i64; MAX_DIM];
    let mut hi = [0i64; MAX_DIM];
    for v in polytope.vertices() {
        for d in 0..n {
            lo[d] = lo[d].min(v[d] * p);
            hi[d] = hi[d].max(v[d] * p);
        }
    }
    let inside = |a: &[i64]| {
        polytope
            .normals()
            .all(|v| v.iter().zip(a).map(|(x, y)| x * y).sum::<i64>() >= -p)
    };
    let mut coords = Vec::new();
    if n == 1 {
        for a in lo[0]..=hi[0] {
            if inside(&[a]) {
                coords.push(a);
            }
        }
    } else {
        for a in lo[0]..=hi[0] {
            for b in lo[1]..=hi[1] {
                if inside(&[a, b]) {
                    coords.push(a);
                    coords.push(b);
                }
            }
        }
    }
    let coords_f64 = coords.iter().map(|&c| c as f64).collect();
    Ok(SectionBasis {
        level,
        dim: n,
        coords,
        coords_f64,
    })
}

/// `∫_P e^{⟨u,ξ⟩} du` together with its first and second moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ExponentialMoments {
    /// `F(ξ) = ∫_P e^{⟨u,ξ⟩} du`.
    pub total: f64,
    /// `M(ξ) = ∫_P u e^{⟨u,ξ⟩} du = ∇F(ξ)`.
    pub first: [f64; MAX_DIM],
    /// `∫_P u uᵀ e^{⟨u,ξ⟩} du = ∇²F(ξ)`.
    pub second: [[f64; MAX_DIM]; MAX_DIM],
}

const MOMENT_TOL: f64 = 1e-13;
const MOMENT_MAX_ORDER: usize = 1024;

fn cone_moments(
    polytope: &ReflexivePolytope,
    xi: &[f64],
    order: usize,
) -> Result<ExponentialMoments, GeometryError> {
    let n = polytope.dim();
    let (t, w) = gauss_legendre(order);
    // Map [-1,1] → [0,1].
    let nodes: Vec<(f64, f64)> = t
        .iter()
        .zip(&w)
        .map(|(t, w)| (0.5 * (t + 1.0), 0.5 * w))
        .collect();
    let mut out = ExponentialMoments {
        total: 0.0,
        first: [0.0; 2],
        second: [[0.0; 2]; 2],
    };
    let mut acc = |u: [f64; 2], weight: f64| {
        let e = weight * exp((0..n).map(|d| u[d] * xi[d]).sum::<f64>());
        out.total += e;
        for i in 0..n {
            out.first[i] += u[i] * e;
            for j in 0..n {
                out.second[i][j] += u[i] * u[j] * e;
            }
        }
    };
    for cone in polytope.cones() {
        if n == 1 {
            let a = cone[0][0];
            for &(s, ws) in &nodes {
                acc([s * a, 0.0], ws * fabs(a));
            }
        } else {
            let (a, b) = (cone[0], cone[1]);
            let jac = fabs(a[0] * b[1] - a[1] * b[0]);
            if jac == 0.0 {
                return Err(GeometryError::DegenerateSimplex(
                    polytope.name().to_string(),
                ));
            }
            for &(s, ws) in &nodes {
                for &(t, wt) in &nodes {
                    let u = [
                        s * ((1.0 - t) * a[0] + t * b[0]),
                        s * ((1.0 - t) * a[1] + t * b[1]),
                    ];
                    acc(u, ws * wt * s * jac);
                }
            }
        }
    }
    Ok(out)
}

/// Exponential moments of `P` by simplex decomposition, doubling the
/// Gauss–Legendre order until successive estimates agree to ~1e-13.
pub fn polytope_exponential_moments(
    polytope: &ReflexivePolytope,
    xi: &[f64],
) -> Result<ExponentialMoments, GeometryError> {
    let n = polytope.dim();
    let radius = polytope
        .vertices()
        .flat_map(|v| v.iter())
        .map(|c| c.abs())
        .max()
        .unwrap_or(1) as f64;
    let mut order = 8;
    let mut prev = cone_moments(polytope, xi, order)?;
    loop {
        order *= 2;
        let next = cone_moments(polytope, xi, order)?;
        let scale = next.total * (1.0 + radius) * (1.0 + radius);
        let mut change = fabs(next.total - prev.total);
        for i in 0..n {
            change = change.max(fabs(next.first[i] - prev.first[i]));
            for j in 0..n {
                change = change.max(fabs(next.second[i][j] - prev.second[i][j]));
            }
        }
        let rel = change / scale;
        if rel <= MOMENT_TOL {
            return Ok(next);
        }
        if order >= MOMENT_MAX_ORDER {
            return Err(GeometryError::MomentsNotConverged(rel));
        }
        prev = next;
    }
}

/// Text table of all presets: name, dimension, normals, vertices, volume and `n_1`.
pub fn catalog_table() -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:>3}  {:<40} {:<40} {:>6} {:>4}",
        "name", "dim", "normals", "vertices", "volume", "n_1"
    );
    for name in PRESET_NAMES {
        let p = ReflexivePolytope::preset(name).expect("built-in preset");
        let fmt = |it: &mut dyn Iterator<Item = &[i64]>| {
            let parts: Vec<String> = it
                .map(|v| {
                    let c: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                    format!("({})", c.join(","))
                })
                .collect();
            parts.join(" ")
        };
        let normals = fmt(&mut p.normals());
        let vertices = fmt(&mut p.vertices());
        let n1 = lattice_points(&p, 1).map(|b| b.len()).unwrap_or(0);
        let _ = writeln!(
            out,
            "{:<8} {:>3}  {:<40} {:<40} {:>6} {:>4}",
            p.name(),
            p.dim(),
            normals,
            vertices,
            p.volume(),
            n1
        );
    }
    out
}
