use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum TfdError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TfdError {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        TfdError::Dimension(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        TfdError::Contract(msg.into())
    }

    /// Process exit code associated with this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            TfdError::Config(_) | TfdError::Contract(_) | TfdError::Unsupported(_) => 1,
            TfdError::Numeric(_) | TfdError::Divergence { .. } => 2,
            TfdError::Format(_) | TfdError::Io(_) => 3,
            TfdError::Dimension(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, TfdError>;
