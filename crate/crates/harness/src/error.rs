use std::path::PathBuf;

use cvahedge_core::CoreError;
use cvahedge_trvo::TrvoError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing checkpoint {}", .0.display())]
    MissingCheckpoint(PathBuf),
    #[error("length mismatch: {0} vs {1} episodes")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Trvo(#[from] TrvoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(HarnessError::Config(msg.into()))
}
