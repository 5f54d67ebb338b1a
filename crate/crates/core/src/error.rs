use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NelaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}: {message}")]
    Load { path: PathBuf, message: String },

    #[error("lasso did not converge after {iterations} sweeps (KKT gap {gap:e})")]
    Convergence { iterations: usize, gap: f64 },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = NelaError> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> NelaError {
    NelaError::InvalidInput(msg.into())
}
