use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::QuantizationError;
use crate::toric::SectionBasis;

/// A torus-invariant Hermitian product on sections, diagonal in the monomial
/// basis: `‖s_α‖² = e^{ℓ_α}`.
#[derive(Clone, Debug, PartialEq)]
pub struct InvariantProduct {
    basis: Arc<SectionBasis>,
    log_weights: Vec<f64>,
}

impl InvariantProduct {
    pub fn new(basis: Arc<SectionBasis>, log_weights: Vec<f64>) -> Result<Self, QuantizationError> {
        if log_weights.len() != basis.len() {
            return Err(QuantizationError::SizeMismatch {
                expected: basis.len(),
                found: log_weights.len(),
            });
        }
        if let Some(i) = log_weights.iter().position(|w| !w.is_finite()) {
            return Err(QuantizationError::NonFiniteWeight(i));
        }
        Ok(Self { basis, log_weights })
    }

    /// All weights equal to one (`ℓ ≡ 0`).
    pub fn uniform(basis: Arc<SectionBasis>) -> Self {
        let n = basis.len();
        Self {
            basis,
            log_weights: vec![0.0; n],
        }
    }

    pub fn basis(&self) -> &Arc<SectionBasis> {
        &self.basis
    }

    pub fn level(&self) -> u32 {
        self.basis.level()
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Every weight multiplied by `e^c`.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            basis: self.basis.clone(),
            log_weights: self.log_weights.iter().map(|l| l + c).collect(),
        }
    }

    /// Same basis, new weights.
    pub fn with_log_weights(&self, log_weights: Vec<f64>) -> Result<Self, QuantizationError> {
        Self::new(self.basis.clone(), log_weights)
    }

    /// Largest `|ℓ_α - ℓ'_α - c|` after removing the best constant `c`
    /// (midrange of the differences).
    pub fn projective_distance(&self, other: &Self) -> f64 {
        let d: Vec<f64> = self
            .log_weights
            .iter()
            .zip(&other.log_weights)
            .map(|(a, b)| a - b)
            .collect();
        let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (hi - lo)
    }
}

/// A torus-invariant Hermitian operator, i.e. a real diagonal in the monomial basis.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalObservable(pub Vec<f64>);

impl DiagonalObservable {
    pub fn identity(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    /// Entry `i` is `f(α_i)`.
    pub fn from_fn(basis: &SectionBasis, f: impl Fn(&[i64]) -> f64) -> Self {
        Self(basis.points().map(f).collect())
    }

    /// The generator `L_ξ`, acting on `s_α` by `⟨α, ξ⟩`.
    pub fn lie_derivative(basis: &SectionBasis, xi: &[f64]) -> Self {
        Self((0..basis.len()).map(|i| basis.pairing(i, xi)).collect())
    }

    pub fn entries(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}
