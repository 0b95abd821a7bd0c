//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("malformed line {line}: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("degenerate document")]
    DegenerateDocument,

    #[error("{0}")]
    Format(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("missing parameter: {0}")]
    MissingParameter(String),

    #[error("shape mismatch for {name}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("vocabulary mismatch: model has V={expected}, corpus has V={found}")]
    VocabMismatch { expected: usize, found: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("graph error: {0}")]
    Graph(String),

    #[error("empty input: {0}")]
    EmptyInput(String),
}
