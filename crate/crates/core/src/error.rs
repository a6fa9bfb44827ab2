//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by solver and diagnostic operations.
#[derive(Debug, Error)]
pub enum KineticError {
    /// Invalid grid construction parameters.
    #[error("invalid grid: {0}")]
    Grid(String),

    /// Mismatched grids, lengths, or stale pairings between inputs.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A parameter is outside its documented domain.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// A computation produced non-finite values or would overflow.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Scenario files that do not describe a runnable problem.
    #[error("invalid scenario: {0}")]
    Scenario(String),

    /// Malformed on-disk artifacts (snapshots, CSV, manifests).
    #[error("format error: {0}")]
    Format(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, KineticError>;
