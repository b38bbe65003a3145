//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QeewError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{bad} of {total} lines malformed, above the {max_frac} threshold")]
    TooManyMalformed { bad: usize, total: usize, max_frac: f64 },

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("no entities to expand")]
    NoEntities,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("all slots ignored, loss undefined")]
    AllSlotsIgnored,

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("duplicate candidate id {0}")]
    DuplicateCandidate(u64),

    #[error("unsupported model file: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },

    #[error("missing component for configuration `{0}`")]
    MissingComponent(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, QeewError>;
