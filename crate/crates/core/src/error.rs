use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MarError>;

#[derive(Debug, Error)]
pub enum MarError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A solver configuration that cannot be run, e.g. step sizes violating
    /// the convergence condition.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value encountered at iteration {iteration} ({location})")]
    Divergence { iteration: usize, location: &'static str },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("png encoding failed: {0}")]
    Png(String),
}

impl MarError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        MarError::InvalidArgument(msg.into())
    }
}
