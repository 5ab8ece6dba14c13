use std::io;

use thiserror::Error;

pub type Result<T, E = EvsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EvsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("invalid token stream: {0}")]
    InvalidStream(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl EvsError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        EvsError::InvalidArgument(msg.into())
    }

    pub(crate) fn corrupt(msg: impl Into<String>) -> Self {
        EvsError::CorruptFile(msg.into())
    }
}
