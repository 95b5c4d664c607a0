//! Error taxonomy shared by every module in the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HadError {
    /// Bad user-supplied configuration (zero counts, invalid ranges, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller violated an operation's precondition (dimension mismatch, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A numerical routine could not proceed (singular system, ...).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Scene/optimizer initialization could not produce a valid state.
    #[error("initialization error: {0}")]
    Init(String),

    /// The optimizer hit a non-finite loss or parameter.
    #[error("training diverged at iteration {iter}: {what}")]
    Diverged { iter: usize, what: String },

    /// Malformed file contents; `offset` is the byte position of the problem.
    #[error("parse error at byte {offset}: {what}")]
    Parse { offset: usize, what: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HadError>;
