//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed file {path}: {msg}")]
    MalformedFile { path: String, msg: String },

    #[error("unknown category name {name:?} in table {table}")]
    UnknownCategory { table: String, name: String },

    #[error("tier mismatch: {0}")]
    TierMismatch(String),

    #[error("conflicting FDI codes within a merge cluster: {0} vs {1}")]
    ConflictingFdi(String, String),

    #[error("degenerate affine transform: {0}")]
    DegenerateTransform(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid tier for this operation: {0}")]
    InvalidTier(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("non-finite loss in term {term} at step {step}")]
    NonFiniteLoss { term: String, step: usize },

    #[error("non-finite entry in cost matrix at ({row}, {col})")]
    NonFiniteCost { row: usize, col: usize },

    #[error("detections are missing assigned FDI labels; run the enumeration post-process first")]
    MissingAssignedLabels,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn malformed(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::MalformedFile {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
