//! Crate-wide error type.

/// Errors surfaced by dataset handling, retrieval, training and evaluation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The input file or column layout does not match the declared schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// A specific CSV row violates a record invariant.
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },

    /// An argument violates an operation precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Vector or layout dimensions do not chain.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An operation requires a non-empty input.
    #[error("empty input: {0}")]
    Empty(String),

    /// The operation is not supported for this dataset or model variant.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A numeric computation failed (NaN loss, singular system, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
