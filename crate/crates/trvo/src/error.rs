use cvahedge_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrvoError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrvoError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(TrvoError::InvalidArgument(msg.into()))
}
