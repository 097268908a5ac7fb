use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Event text line that is not `t,x,y,p`.
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    /// Event timestamps must be non-decreasing.
    #[error("line {line}: timestamp {t} decreases below {prev}")]
    EventOrder { line: usize, t: u64, prev: u64 },

    /// Tensor or grid dimensions that do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Ragged token arities inconsistent with a selection result.
    #[error("arity mismatch: {0}")]
    Arity(String),

    /// Configuration values outside their documented domain.
    #[error("invalid config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn arity(msg: impl Into<String>) -> Self {
        Error::Arity(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
