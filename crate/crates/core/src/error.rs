use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Arguments or artifacts that violate a documented precondition.
    #[error("invalid input: {0}")]
    Invalid(String),
    /// Shapes, lengths or identities that should agree but do not.
    #[error("mismatch: {0}")]
    Mismatch(String),
    /// Malformed manifest, CSV, config or binary container.
    #[error("parse error: {0}")]
    Parse(String),
    /// A computation produced a non-finite value or could not proceed.
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    /// True for failures detected before any real computation happens
    /// (bad arguments, missing or malformed artifacts).
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Invalid(_) | Error::Mismatch(_) | Error::Parse(_) => true,
            Error::Io(e) => e.kind() == io::ErrorKind::NotFound,
            Error::Numeric(_) => false,
        }
    }
}

macro_rules! invalid {
    ($($arg:tt)*) => { $crate::error::Error::Invalid(format!($($arg)*)) };
}

macro_rules! mismatch {
    ($($arg:tt)*) => { $crate::error::Error::Mismatch(format!($($arg)*)) };
}

macro_rules! parse_err {
    ($($arg:tt)*) => { $crate::error::Error::Parse(format!($($arg)*)) };
}

pub(crate) use {invalid, mismatch, parse_err};
