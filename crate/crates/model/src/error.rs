use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] bertctc_core::Error),
    #[error(transparent)]
    Autodiff(#[from] bertctc_autodiff::Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("model lacks capability: {0}")]
    Capability(String),
}

pub type Result<T> = std::result::Result<T, Error>;
