use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("token index {token} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { token: usize, vocab_size: usize },

    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("privacy filter violation: document {doc_id} has {remaining} micro-eps left, charge of {requested} refused")]
    FilterViolation {
        doc_id: String,
        remaining: u64,
        requested: u64,
    },

    #[error("unknown document id {0}")]
    UnknownDocument(String),

    #[error("empty histogram")]
    EmptyHistogram,

    #[error("infeasible workload: {0}")]
    InfeasibleWorkload(String),

    /// Transient generator failure; the caller may retry.
    #[error("generator unavailable: {0}")]
    GeneratorRetriable(String),

    #[error("malformed generator response: {0}")]
    GeneratorMalformed(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn is_retriable(&self) -> bool {
        matches!(self, Error::GeneratorRetriable(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
