use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("bound undefined: {0}")]
    UndefinedBound(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown environment `{name}` (valid names: {valid})")]
    UnknownEnv { name: String, valid: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// True for failures caused by numerics (divergence, non-finite values)
    /// rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Training(_))
    }
}
