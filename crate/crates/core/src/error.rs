use thiserror::Error;

/// Errors raised by lattice, loss and masking operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid alignment: {0}")]
    InvalidAlignment(String),
    #[error("invalid token sequence: {0}")]
    InvalidSequence(String),
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("oracle too large: {0}")]
    OracleTooLarge(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
