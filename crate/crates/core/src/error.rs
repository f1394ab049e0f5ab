use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("row {row}: {cause}")]
    InvalidRow { row: usize, cause: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("{name} = {value} is out of range ({allowed})")]
    OutOfRange {
        name: &'static str,
        value: String,
        allowed: String,
    },

    #[error("invalid weight vector: {0}")]
    InvalidWeights(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("cross-validation: {0}")]
    Tuning(String),

    #[error("csv {path}: row {row}, column {column}: {cause}")]
    Csv {
        path: PathBuf,
        row: usize,
        column: String,
        cause: String,
    },

    #[error("replication failed: {0}")]
    Replication(String),

    #[error("config: {0}")]
    Config(String),

    #[error("model format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn out_of_range(
        name: &'static str,
        value: impl ToString,
        allowed: impl ToString,
    ) -> Self {
        Error::OutOfRange {
            name,
            value: value.to_string(),
            allowed: allowed.to_string(),
        }
    }
}
