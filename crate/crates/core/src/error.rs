use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid label {label} for logistic loss (expected -1 or +1)")]
    InvalidLabel { label: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("linear system is not positive definite ({0}); set ridge > 0")]
    NotPositiveDefinite(&'static str),

    #[error("matrix is zero: no leading direction")]
    ZeroMatrix,

    #[error(
        "inner solver did not converge after {iterations} iterations (gradient norm {grad_norm:e})"
    )]
    InnerSolve { iterations: usize, grad_norm: f64 },

    #[error("worker {worker} uploaded a non-finite vector in round {round}")]
    NonFiniteUpload { worker: usize, round: u64 },

    #[error("solver diverged at round {round}: {reason}")]
    Diverged { round: u64, reason: String },

    #[error("ledger mismatch in round {round}: declared {declared} vectors per worker, metered {metered}")]
    LedgerMismatch {
        round: u64,
        declared: u64,
        metered: u64,
    },

    #[error("malformed dataset at {path}: {reason}")]
    Dataset { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
