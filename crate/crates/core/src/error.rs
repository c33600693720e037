use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("architecture mismatch: {0}")]
    Architecture(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("not enough samples: have {have}, need {need}")]
    InsufficientSamples { have: usize, need: usize },

    #[error("parameter server has no published snapshot")]
    Uninitialized,

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) => 2,
            _ => 1,
        }
    }
}
