//! Numerical kernels shared by all models.

pub mod bessel;
pub mod linalg;
pub mod lsq;
pub mod propagate;
pub mod rng;

pub use bessel::bessel_j;
pub use linalg::{ComplexMatrix, ComplexVector};
pub use lsq::{fit_least_squares, fit_least_squares_with, FitOptions, FitResult, Observation};
pub use propagate::{propagate, propagate_ket, propagate_ket_sampled, propagate_sampled, Collapse, Tolerances};
pub use rng::RngStream;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("matrix is not Hermitian")]
    NonHermitian,
    #[error("step {step:e} s too coarse; fastest dynamics need step <= {limit:e} s")]
    StepTooCoarse { step: f64, limit: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("no convergence: {0}")]
    NoConvergence(String),
}
