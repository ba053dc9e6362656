use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Malformed input. `at` names where: a 1-based line for text inputs,
    /// a byte offset for binary files.
    #[error("format error at {at}: {msg}")]
    Format { at: Location, msg: String },

    #[error("content error: {0}")]
    Content(String),

    #[error("generation failed{}: {msg}", index.map(|i| format!(" for sample {i}")).unwrap_or_default())]
    Generation { index: Option<u64>, msg: String },

    #[error("numeric error in {context}: {msg}")]
    Numeric { context: String, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Offset(u64),
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Location::Line(l) => write!(f, "line {l}"),
            Location::Offset(o) => write!(f, "byte offset {o}"),
        }
    }
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn at_line(line: usize, msg: impl Into<String>) -> Self {
        Error::Format { at: Location::Line(line), msg: msg.into() }
    }

    pub(crate) fn at_offset(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format { at: Location::Offset(offset), msg: msg.into() }
    }

    pub(crate) fn numeric(context: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Numeric { context: context.into(), msg: msg.into() }
    }

    /// Byte offset of a binary format error, if that is what this is.
    pub fn offset(&self) -> Option<u64> {
        match self {
            Error::Format { at: Location::Offset(o), .. } => Some(*o),
            _ => None,
        }
    }
}
