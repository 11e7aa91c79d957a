//! Shared error type for the crate.

/// Everything that can go wrong across the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An architecture descriptor string failed to parse or validate.
    #[error("invalid architecture descriptor `{descriptor}`: {reason}")]
    BadDescriptor { descriptor: String, reason: String },

    /// Shapes or lengths that must agree did not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A caller-supplied value is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A computation produced NaN/Inf or otherwise lost numeric meaning.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Dataset files are missing, truncated, or malformed.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// A checkpoint file is malformed, corrupt, or incompatible.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A sweep ran out of its cell budget before finishing.
    #[error("budget exhausted: {0}")]
    BudgetExhausted(String),

    /// An environment rejected an action or reached an invalid state.
    #[error("environment error: {0}")]
    Environment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
