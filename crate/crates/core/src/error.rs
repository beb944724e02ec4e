use thiserror::Error;

/// Errors raised by the simulation, pricing and environment layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("inconsistent input: {0}")]
    InconsistentInput(String),
    #[error("wrong pricer: {0}")]
    WrongPricer(String),
    #[error("point outside pricing grid: {0}")]
    Extrapolation(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("degenerate hedge: {0}")]
    DegenerateHedge(String),
    #[error("singular hedge system: {0}")]
    SingularHedge(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl From<std::io::Error> for CoreError {
    fn from(e: std::io::Error) -> Self {
        CoreError::Io(e.to_string())
    }
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(CoreError::InvalidArgument(msg.into()))
}
