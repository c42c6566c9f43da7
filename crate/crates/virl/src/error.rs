//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {what}")]
    EmptyInput { what: &'static str },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("matrix is not positive definite: {what}")]
    NotPositiveDefinite { what: &'static str },

    #[error("non-finite value: {what}")]
    NonFinite { what: String },

    #[error("degenerate importance weights: {reason}")]
    DegenerateWeights { reason: String },

    #[error("no component produced a usable update")]
    NoUsableComponent,

    #[error("network is in {actual} mode, expected {expected}")]
    WrongMode {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("malformed data: {what}")]
    Format { what: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn format(what: impl Into<String>) -> Self {
        Error::Format { what: what.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
