use thiserror::Error;

use crate::pipelines::RecoveryResult;

/// Errors produced by the recovery library.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed data: shape mismatches, non-finite entries.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A parameter outside its admissible range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Input that carries no usable information, e.g. a mask with no observed entry.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// The support-estimation phase selected no column. Carries the partial result.
    #[error("support estimate is empty after phase A")]
    EmptySupport(Box<RecoveryResult>),

    /// Every point of a sweep failed.
    #[error("all {} grid points failed", .0.len())]
    AllFailed(Vec<String>),

    /// A dense factorization did not converge.
    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid_input(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn invalid_argument(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
