use thiserror::Error;

use crate::harness::idx::IdxError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// A normalization in the decoder hit a vector whose norm is below the
    /// zero-norm floor.
    #[error("degenerate payload: {0}")]
    Degenerate(String),

    #[error("gradient tape: {0}")]
    Tape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("partition: {0}")]
    Partition(String),

    #[error("distillation failed: {0}")]
    DistillFailed(String),

    #[error("round {round}: {reason}")]
    Round { round: usize, reason: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Idx(#[from] IdxError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
