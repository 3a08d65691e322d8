//! Crate-wide error type.

use thiserror::Error;

/// How an error should be classified at a process boundary: bad input vs a
/// numerical method that failed on valid input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Validation,
    Solver,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {context} (got {got}, expected {expected})")]
    DimensionMismatch {
        context: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("matrix is not symmetric: max |M - M'| = {asymmetry:.3e} exceeds 1e-10")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive definite: min eigenvalue {min_eig:.3e}")]
    NotPositiveDefinite { min_eig: f64 },

    #[error("singular matrix in {context}: condition estimate {condition:.3e}")]
    Singular { context: &'static str, condition: f64 },

    #[error("ill-conditioned matrix in {context}: condition {condition:.3e} exceeds {limit:.1e}")]
    IllConditioned {
        context: &'static str,
        condition: f64,
        limit: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {context} (got {got}, need at least {need})")]
    InsufficientData {
        context: &'static str,
        got: usize,
        need: usize,
    },

    #[error("optimizer did not converge after {iterations} iterations in {context}; best objective {best:.6e}")]
    NonConvergence {
        context: &'static str,
        iterations: usize,
        best: f64,
    },

    #[error("no feasible point: {0}")]
    Infeasible(String),

    #[error("tight estimate does not exist: fused precision is not positive definite (min eigenvalue {min_eig:.3e})")]
    NoTightEstimate { min_eig: f64 },

    #[error("schema violation in {path} row {row}: {message}")]
    Schema {
        path: String,
        row: usize,
        message: String,
    },

    #[error("missing config field: {0}")]
    MissingField(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Validation errors map to exit code 2, solver failures to exit code 3.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Singular { .. }
            | Error::IllConditioned { .. }
            | Error::NonConvergence { .. }
            | Error::Infeasible(_)
            | Error::NoTightEstimate { .. } => ErrorCategory::Solver,
            _ => ErrorCategory::Validation,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
