use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error)]
pub enum QkdError {
    #[error("invalid source: {0}")]
    InvalidSource(String),

    #[error("invalid link: {0}")]
    InvalidLink(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("key length mismatch: alice has {alice} bits, bob has {bob}")]
    LengthMismatch { alice: usize, bob: usize },

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("insufficient counts: {0}")]
    InsufficientCounts(String),

    #[error("entropy source exhausted after {consumed} bits")]
    EntropyExhausted { consumed: u64 },

    #[error("malformed transcript: {0}")]
    Transcript(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl QkdError {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        QkdError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, QkdError>;
