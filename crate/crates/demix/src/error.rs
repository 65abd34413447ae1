//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by parsing, model fitting, and the pipeline commands.
#[derive(Debug, Error)]
pub enum DemixError {
    /// Malformed input record; carries the 1-based line number.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A parameter outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// An optimizer or EM fit failed to converge; carries the best iterate seen.
    #[error("estimation error: {message} (best iterate: {best:?})")]
    NonConvergence { message: String, best: Vec<f64> },

    /// The filtered profile has no heterogeneous site to fit a mixture on.
    #[error("no variant evidence")]
    NoVariantEvidence,

    /// Inconsistent caller-supplied data (empty inputs, length mismatches, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DemixError>;
