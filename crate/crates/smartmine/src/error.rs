//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the workbench.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or contract violation detected up front.
    #[error("configuration error: {0}")]
    Config(String),

    /// Non-finite values or other numeric breakdowns.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A vector with (near-)zero norm reached a normalisation layer.
    #[error("degenerate normalisation input: pre-normalisation vector has zero norm")]
    DegenerateNorm,

    /// A neighbour list contained no same-class entry, so no exclusion
    /// boundary can be computed for its anchor.
    #[error("no positive neighbour in list for anchor {anchor}")]
    NoPositive { anchor: usize },

    /// Least-squares fit attempted on a history without error variance.
    #[error("degenerate controller fit: all recorded training errors are identical")]
    DegenerateFit,

    /// File contents violated the expected format.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn parse(offset: u64, msg: impl Into<String>) -> Self {
        Error::Parse { offset, message: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
