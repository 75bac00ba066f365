//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T, E = SnapError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SnapError {
    /// Shapes or dimensions of an input do not match what the callee expects.
    #[error("input error: {0}")]
    Input(String),

    /// An argument is outside its documented domain.
    #[error("argument error: {0}")]
    Argument(String),

    /// Non-finite values, failed factorizations, diverging losses.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An operation was invoked on an object that has not been fitted yet.
    #[error("state error: {0}")]
    State(String),

    /// A fitting routine cannot produce a result from the given data.
    #[error("fit error: {0}")]
    Fit(String),

    /// A metric is undefined on the provided data (e.g. no positives).
    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error("config error: {0}")]
    Config(String),

    /// Artifacts that cannot be used together (container/engine mismatch).
    #[error("incompatible artifacts: {0}")]
    Incompatible(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SnapError {
    pub fn input(msg: impl Into<String>) -> Self {
        Self::Input(msg.into())
    }

    pub fn argument(msg: impl Into<String>) -> Self {
        Self::Argument(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Self::Numeric(msg.into())
    }

    pub fn state(msg: impl Into<String>) -> Self {
        Self::State(msg.into())
    }

    pub fn fit(msg: impl Into<String>) -> Self {
        Self::Fit(msg.into())
    }

    pub fn undefined(msg: impl Into<String>) -> Self {
        Self::Undefined(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub fn incompatible(msg: impl Into<String>) -> Self {
        Self::Incompatible(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Self::Format(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            SnapError::Config(_) | SnapError::Argument(_) | SnapError::Fit(_) => 2,
            SnapError::Numeric(_) | SnapError::Undefined(_) => 3,
            SnapError::Incompatible(_) | SnapError::State(_) | SnapError::Format(_) => 4,
            SnapError::Input(_) | SnapError::Io(_) | SnapError::Json(_) => 1,
        }
    }
}
