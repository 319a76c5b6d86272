//! Error type shared across the toolkit.

use thiserror::Error;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Input could not be parsed (data files, config files).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A vector did not match the dataset-declared embedding dimension.
    #[error("dimension mismatch for document {id}: expected {expected}, got {actual}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        actual: usize,
    },

    /// Two documents share an id.
    #[error("duplicate document id: {0}")]
    DuplicateId(String),

    /// A document is missing a required embedding.
    #[error("document {0} is missing a required embedding")]
    MissingEmbedding(String),

    /// A document is missing required text.
    #[error("document {0} is missing required text")]
    MissingText(String),

    /// A domain does not hold enough documents for the requested splits.
    #[error("domain {domain}: requested {requested} documents but only {available} available")]
    InsufficientDocuments {
        domain: String,
        requested: usize,
        available: usize,
    },

    /// A required document pool came out empty.
    #[error("empty pool: {0}")]
    EmptyPool(String),

    /// A configuration value violates an invariant.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Tensor shapes do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A gradient or loss went non-finite; training fails fast.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Operation not supported for the given configuration.
    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// The probe endpoint failed after exhausting retries.
    #[error("probe request failed after {attempts} attempts: {msg}")]
    ProbeFailed { attempts: usize, msg: String },

    /// Required auth token absent from the environment.
    #[error("missing auth token: environment variable {0} is not set")]
    MissingToken(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 1 for validation problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::DimensionMismatch { .. }
            | Error::DuplicateId(_)
            | Error::MissingEmbedding(_)
            | Error::MissingText(_)
            | Error::InsufficientDocuments { .. }
            | Error::EmptyPool(_)
            | Error::InvalidConfig(_)
            | Error::ShapeMismatch(_)
            | Error::MissingToken(_)
            | Error::Unsupported(_) => 1,
            Error::NonFinite(_)
            | Error::ProbeFailed { .. }
            | Error::Io(_)
            | Error::Json(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
