use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid mdp: {0}")]
    InvalidMdp(String),

    /// A non-finite loss, gradient or parameter appeared during training.
    #[error("divergence at iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;
