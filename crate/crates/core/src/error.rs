//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// Which end of the radial interval a singular integrand blew up at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum End {
    /// r -> 1, the singular boundary sphere.
    Outer,
    /// r -> 0, the polar axis.
    Inner,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("divergent integral at the {end:?} end (local exponent {exponent:.4} <= -1)")]
    Divergent { end: End, exponent: f64 },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("degenerate check: {0}")]
    Degenerate(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
