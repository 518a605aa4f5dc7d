use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    #[error("fit failure: {0}")]
    FitFailure(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
    #[error("unstable estimate: {0}")]
    UnstableEstimate(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
