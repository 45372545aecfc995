use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("computation error: {0}")]
    Computation(String),
    #[error("compatibility violation: {0}")]
    Compatibility(String),
    #[error("operator mismatch: {0}")]
    Mismatch(String),
    #[error("bad operator file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
