use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FqeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("operation requires a tabular environment, got `{0}`")]
    UnsupportedEnvironment(String),

    #[error("feature covariance is singular: rank {rank} of {dim}")]
    SingularMatrix { rank: usize, dim: usize },

    #[error("bootstrap runs are not paired: {0}")]
    Pairing(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("dataset parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, FqeError>;

pub(crate) fn invalid(msg: impl Into<String>) -> FqeError {
    FqeError::InvalidArgument(msg.into())
}

impl From<std::io::Error> for FqeError {
    fn from(e: std::io::Error) -> Self {
        FqeError::Io(e.to_string())
    }
}
