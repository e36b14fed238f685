//! Numerical workbench for quantized Kähler–Ricci solitons on toric Fano
//! curves and surfaces.
//!
//! Modules build on each other in this order: [`toric`] (polytopes and
//! section bases), [`quadrature`], [`quantization`] (potentials, Gram
//! products, Toeplitz and Berezin maps), [`soliton`] (soliton vector fields),
//! [`balance`] (moment map and balancing flows) and [`spectral`] (quantum
//! channel and Laplacian spectra).
#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod balance;
pub mod error;
pub mod math;
pub mod parallel;
pub mod quadrature;
pub mod quantization;
pub mod soliton;
pub mod spectral;
pub mod toric;

pub use error::{
    BalanceError, GeometryError, QuadratureError, QuantizationError, SolverError, SpectralError,
};
