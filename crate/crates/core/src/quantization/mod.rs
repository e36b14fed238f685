//! Berezin–Toeplitz quantization on the torus-invariant sector.
//!
//! Conventions in log-coordinates `x_i = ln|z_i|²`:
//!
//! * `|s_α|²_{h^p}(x) = exp(⟨α,x⟩ - pφ(x))`
//! * `dν_h = (2π)ⁿ e^{-φ(x)} dx`
//! * `ωⁿ/n! = det ∇²φ(x) dx`
//! * `L_ξ s_α = ⟨α,ξ⟩ s_α`, `θ_h(ξ) = ⟨∇φ, ξ⟩`
//! * the flow of `ξ` at time `t` is the translation `x ↦ x + 2tξ`.

mod potential;
mod product;

pub use potential::{FubiniStudy, Jet, JetFn, Potential, PotentialKind};
pub use product::{DiagonalObservable, InvariantProduct};

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::QuantizationError;
use crate::math::{exp, LN_2PI};
use crate::quadrature::{integrate_scaled, tilted_sums, QuadratureGrid};
use crate::toric::SectionBasis;

/// The fixed dictionary between geometric objects and log-coordinate formulas.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CoordinateDictionary {
    pub section_norm: &'static str,
    pub volume_form: &'static str,
    pub kahler_volume: &'static str,
    pub lie_weight: &'static str,
    pub holomorphy_potential: &'static str,
    pub torus_flow: &'static str,
}

/// The conventions used throughout the crate.
pub const fn coordinate_dictionary() -> CoordinateDictionary {
    CoordinateDictionary {
        section_norm: "|s_a|^2_{h^p}(x) = exp(<a,x> - p*phi(x))",
        volume_form: "dnu_h = (2pi)^n exp(-phi(x)) dx",
        kahler_volume: "omega^n/n! = det(Hess phi)(x) dx",
        lie_weight: "L_xi s_a = <a,xi> s_a",
        holomorphy_potential: "theta_h(xi)(x) = <grad phi(x), xi>",
        torus_flow: "flow of xi at time t: x -> x + 2 t xi",
    }
}

/// `ln |s_α|²_{h^p}(x)`.
pub fn section_log_norm(alpha: &[f64], x: &[f64], phi: f64, level: u32) -> f64 {
    alpha.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - level as f64 * phi
}

/// Log-density of `dν_h` against `dx`.
pub fn volume_log_density(phi: f64, dim: usize) -> f64 {
    dim as f64 * LN_2PI - phi
}

/// Weight of `s_α` under `L_ξ`.
pub fn lie_weight(alpha: &[f64], xi: &[f64]) -> f64 {
    alpha.iter().zip(xi).map(|(a, b)| a * b).sum()
}

/// `θ_h(ξ)` from the gradient of the potential.
pub fn holomorphy_potential(grad: &[f64], xi: &[f64]) -> f64 {
    grad.iter().zip(xi).map(|(a, b)| a * b).sum()
}

/// Translation of log-coordinates induced by flowing along `ξ` for time `t`.
pub fn flow_translation(xi: &[f64], t: f64) -> Vec<f64> {
    xi.iter().map(|v| 2.0 * t * v).collect()
}

/// `(ωⁿ/n!) / dν_h` at `x`, the leading coefficient of the Bergman density.
pub fn bergman_leading_density(phi: &Potential, x: &[f64]) -> f64 {
    exp(phi.log_det_hessian(x) + phi.value(x) - phi.dim() as f64 * LN_2PI)
}

/// `ln Vol(dν_φ) = ln (2π)ⁿ ∫ e^{-φ}`.
pub fn log_volume(phi: &Potential, grid: &QuadratureGrid) -> f64 {
    let values = phi
        .values_on(grid)
        .into_iter()
        .map(|v| -v)
        .collect::<Vec<_>>();
    grid.dim() as f64 * LN_2PI + integrate_scaled(grid, &values, None).ln()
}

fn check_grid(basis: &SectionBasis, grid: &QuadratureGrid) -> Result<(), QuantizationError> {
    if basis.dim() != grid.dim() {
        return Err(crate::error::QuadratureError::DimensionMismatch {
            grid: grid.dim(),
            input: basis.dim(),
        }
        .into());
    }
    Ok(())
}

/// The `L²(h^p)` product: `ℓ_α = ln[(2π)ⁿ ∫ exp(⟨α,x⟩ - (p+1)φ(x)) dx]`.
pub fn gram(
    phi: &Potential,
    basis: &Arc<SectionBasis>,
    grid: &QuadratureGrid,
) -> Result<InvariantProduct, QuantizationError> {
    check_grid(basis, grid)?;
    let c = basis.level() as f64 + 1.0;
    let base = phi
        .values_on(grid)
        .into_iter()
        .map(|v| -c * v)
        .collect::<Vec<_>>();
    if base.iter().any(|v| !v.is_finite()) {
        return Err(crate::error::QuadratureError::NonFinite.into());
    }
    let n = basis.dim() as f64;
    let lw = tilted_sums(grid, &base, basis.coords_f64(), [])
        .iter()
        .map(|s| n * LN_2PI + s.ln())
        .collect();
    InvariantProduct::new(basis.clone(), lw)
}

/// The Fubini–Study potential `φ(x) = (1/p) ln Σ_α exp(⟨α,x⟩ - ℓ_α)`.
pub fn fs_potential(product: &InvariantProduct) -> Potential {
    Potential::fubini_study(product)
}

/// The density of states `ρ(x) = exp(p(φ_FS(x) - φ_ambient(x)))`.
pub fn rawnsley(product: &InvariantProduct, ambient: &Potential, x: &[f64]) -> f64 {
    let fs = fs_potential(product);
    exp(product.level() as f64 * (fs.value(x) - ambient.value(x)))
}

/// Toeplitz quantizations of several functions, given by their node values.
///
/// `T(f)_α = e^{-ℓ_α} (2π)ⁿ ∫ f(x) exp(⟨α,x⟩ - (p+1)φ_ambient(x)) dx`.
pub fn toeplitz_many<const K: usize>(
    factors: [&[f64]; K],
    product: &InvariantProduct,
    ambient: &Potential,
    grid: &QuadratureGrid,
) -> Result<[DiagonalObservable; K], QuantizationError> {
    let basis = product.basis();
    check_grid(basis, grid)?;
    let c = basis.level() as f64 + 1.0;
    let base = ambient
        .values_on(grid)
        .into_iter()
        .map(|v| -c * v)
        .collect::<Vec<_>>();
    let n = basis.dim() as f64;
    let sums = tilted_sums(grid, &base, basis.coords_f64(), factors);
    let mut out: [DiagonalObservable; K] =
        core::array::from_fn(|_| DiagonalObservable(Vec::with_capacity(sums.len())));
    for (s, l) in sums.iter().zip(product.log_weights()) {
        let norm = exp(n * LN_2PI + s.shift - l);
        for k in 0..K {
            out[k].0.push(norm * s.weighted[k]);
        }
    }
    Ok(out)
}

/// Toeplitz quantization `T(f)` of a torus-invariant function.
pub fn toeplitz<F>(
    f: F,
    product: &InvariantProduct,
    ambient: &Potential,
    grid: &QuadratureGrid,
) -> Result<DiagonalObservable, QuantizationError>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let values = grid.evaluate(f);
    let [t] = toeplitz_many([&values], product, ambient, grid)?;
    Ok(t)
}

/// Berezin symbol `σ(A)(x) = Σ_α A_α w_α(x)` with softmax weights `w_α`.
pub fn berezin_symbol(
    a: &DiagonalObservable,
    product: &InvariantProduct,
    x: &[f64],
) -> Result<f64, QuantizationError> {
    if a.len() != product.len() {
        return Err(QuantizationError::BasisMismatch);
    }
    let mut w = Vec::new();
    symbol_with(a, product, x, &mut w)
}

fn symbol_with(
    a: &DiagonalObservable,
    product: &InvariantProduct,
    x: &[f64],
    w: &mut Vec<f64>,
) -> Result<f64, QuantizationError> {
    potential::softmax_weights(product, x, w);
    Ok(w.iter().zip(a.entries()).map(|(w, a)| w * a).sum())
}

/// Softmax weights `w_α(x)` of the Berezin symbol.
pub fn symbol_weights(product: &InvariantProduct, x: &[f64], out: &mut Vec<f64>) {
    potential::softmax_weights(product, x, out);
}

/// The Berezin transform `B(f) = σ(T(f))` of a fixed function.
#[derive(Clone, Debug)]
pub struct BerezinTransform {
    product: InvariantProduct,
    toeplitz: DiagonalObservable,
}

impl BerezinTransform {
    /// `B(f)(x)`.
    pub fn at(&self, x: &[f64]) -> f64 {
        let mut w = Vec::new();
        symbol_with(&self.toeplitz, &self.product, x, &mut w).unwrap_or(f64::NAN)
    }

    /// The intermediate Toeplitz operator `T(f)`.
    pub fn toeplitz(&self) -> &DiagonalObservable {
        &self.toeplitz
    }
}

/// Builds the Berezin transform of `f` for the product `H = gram(φ_ambient)`.
pub fn berezin_transform<F>(
    f: F,
    product: &InvariantProduct,
    ambient: &Potential,
    grid: &QuadratureGrid,
) -> Result<BerezinTransform, QuantizationError>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let toeplitz = toeplitz(f, product, ambient, grid)?;
    Ok(BerezinTransform {
        product: product.clone(),
        toeplitz,
    })
}

/// The product of the twisted basis `e^{L_ξ/2p} s`: `ℓ'_α = ℓ_α - ⟨α,ξ⟩/p`.
///
/// Its Fubini–Study potential is the original one translated by `ξ/p`.
pub fn twist_product(product: &InvariantProduct, xi: &[f64]) -> InvariantProduct {
    let basis = product.basis();
    let p = basis.level() as f64;
    let lw = product
        .log_weights()
        .iter()
        .enumerate()
        .map(|(a, l)| l - basis.pairing(a, xi) / p)
        .collect();
    InvariantProduct::new(basis.clone(), lw).expect("twisting preserves finiteness")
}

/// `ln Tr[e^{L_ξ/p}] = ln Σ_α e^{⟨α,ξ⟩/p}`.
pub fn log_twisted_trace(basis: &SectionBasis, xi: &[f64]) -> f64 {
    let p = basis.level() as f64;
    let v: Vec<f64> = (0..basis.len()).map(|a| basis.pairing(a, xi) / p).collect();
    crate::math::log_sum_exp(&v)
}
