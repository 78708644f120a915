use fqe_core::FqeError;

#[derive(Debug, thiserror::Error)]
pub enum ExpError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Core(#[from] FqeError),
}

pub type ExpResult<T> = std::result::Result<T, ExpError>;

impl ExpError {
    pub fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        ExpError::Io { path: path.display().to_string(), message: err.to_string() }
    }

    /// Stable one-word category for the CLI's error line.
    pub fn category(&self) -> &'static str {
        match self {
            ExpError::Config(_) => "config",
            ExpError::Io { .. } => "io",
            ExpError::Core(e) => match e {
                FqeError::InvalidArgument(_) => "argument",
                FqeError::UnsupportedEnvironment(_) => "unsupported",
                FqeError::SingularMatrix { .. } => "singular",
                FqeError::Pairing(_) => "pairing",
                FqeError::UndefinedCorrelation(_) => "correlation",
                FqeError::Io(_) => "io",
                FqeError::Parse { .. } => "parse",
            },
        }
    }
}
