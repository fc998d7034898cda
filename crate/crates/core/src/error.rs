//! Error type shared by the numerical modules.

use thiserror::Error;

/// Failures raised by grid construction, assembly, solvers and diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("conductivity: {0}")]
    Conductivity(String),
    #[error("assembly: {0}")]
    Assembly(String),
    #[error("eigensolver: {0}")]
    Eigen(String),
    #[error("spectral reconstruction residual {residual:.3e} exceeds {tol:.1e}")]
    Reconstruction { residual: f64, tol: f64 },
    #[error("time grid: {0}")]
    TimeGrid(String),
    #[error("quadrature not converged: coarse {coarse:.12e}, refined {fine:.12e}")]
    QuadratureNotConverged { coarse: f64, fine: f64 },
    #[error("solver stagnated after {iterations} iterations at relative residual {residual:.3e}")]
    Stagnation {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("support: {0}")]
    Support(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("mesh: {0}")]
    Mesh(String),
    #[error("map: {0}")]
    Map(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
