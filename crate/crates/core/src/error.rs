use alloc::string::String;
use thiserror::Error;

/// Failures in polytope construction and lattice enumeration.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("unknown manifold `{0}` (expected one of CP1, CP2, CP1xCP1, dP6, dP7, dP8)")]
    UnknownPreset(String),
    #[error("polytope `{name}` is not reflexive: {reason}")]
    NotReflexive { name: String, reason: String },
    #[error("dimension {0} is not supported (only 1 and 2)")]
    UnsupportedDimension(usize),
    #[error("level must be at least 1, got {0}")]
    InvalidLevel(i64),
    #[error("degenerate simplex in decomposition of `{0}`")]
    DegenerateSimplex(String),
    #[error("exponential moment integrals did not converge (last relative change {0:e})")]
    MomentsNotConverged(f64),
}

/// Failures while constructing or using a quadrature grid.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("grid refinement failed: order {order} exceeds the cap {cap} (last change {change:e}, tolerance {tol:e})")]
    RefinementFailed {
        order: usize,
        cap: usize,
        change: f64,
        tol: f64,
    },
    #[error("truncation box could not be made large enough (half-width {0})")]
    BoxNotFound(f64),
    #[error("integrand is not finite at a quadrature node")]
    NonFinite,
    #[error("dimension mismatch: grid has {grid}, input has {input}")]
    DimensionMismatch { grid: usize, input: usize },
}

/// Failures of the quantization layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantizationError {
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error("size mismatch: expected {expected} entries, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("non-finite log-weight for section {0}")]
    NonFiniteWeight(usize),
    #[error("observable does not match the section basis")]
    BasisMismatch,
}

/// Failures of the Newton solvers for the soliton vector field.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("Newton iteration failed to converge after {iterations} steps (gradient norm {grad_norm:e})")]
    NotConverged { iterations: usize, grad_norm: f64 },
    #[error("Hessian is not positive definite")]
    IndefiniteHessian,
    #[error("line search failed to decrease the objective")]
    LineSearchFailed,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Failures of the balancing flows.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BalanceError {
    #[error(transparent)]
    Quantization(#[from] QuantizationError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("flow did not reach tolerance {tol:e} within {iterations} iterations (residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        tol: f64,
    },
    #[error("energy increased beyond round-off and step damping could not recover")]
    EnergyIncrease,
    #[error("initial product does not match the section basis")]
    InitMismatch,
    #[error("Hessian of the potential is not positive definite on the grid window")]
    DegenerateHessian,
}

/// Failures of the spectral layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error(transparent)]
    Quantization(#[from] QuantizationError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error("channel matrix is not symmetrizable: defect {defect:e} exceeds {limit:e}; the weight conventions are inconsistent")]
    Conventions { defect: f64, limit: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Balance(#[from] BalanceError),
    #[error("Galerkin mass matrix is not positive definite")]
    SingularMass,
}
