//! Crate-wide error type.
//!
//! `Input` covers shape and argument mismatches, `Numeric` covers
//! non-finite values and failed numeric preconditions, `Schema` covers
//! malformed configs, fixtures, datasets and checkpoints. The CLI maps
//! `Numeric` to exit code 2 and everything else to 1.

use std::fmt;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn input(msg: impl fmt::Display) -> Self {
        Error::Input(msg.to_string())
    }

    pub fn numeric(msg: impl fmt::Display) -> Self {
        Error::Numeric(msg.to_string())
    }

    pub fn schema(msg: impl fmt::Display) -> Self {
        Error::Schema(msg.to_string())
    }
}
