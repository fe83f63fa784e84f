use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported eigenvalue family: {0}")]
    UnsupportedFamily(String),

    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("coupling violated: {0}")]
    Coupling(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
