use std::fmt;
use std::path::Path;

use overseg::Error;

/// A user-facing failure carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

pub const EXIT_ARGUMENT: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_FORMAT: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;

impl Failure {
    pub fn argument(message: impl Into<String>) -> Self {
        Self { code: EXIT_ARGUMENT, message: message.into() }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self { code: EXIT_IO, message: format!("{}: {e}", path.display()) }
    }

    /// Maps a library error, naming `path` as the file involved.
    pub fn at(path: &Path, e: Error) -> Self {
        let mut f = Self::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Argument(_) => EXIT_ARGUMENT,
            Error::Io(_) => EXIT_IO,
            Error::Format { .. } | Error::Content(_) => EXIT_FORMAT,
            Error::Generation { .. } | Error::Numeric { .. } => EXIT_NUMERIC,
        };
        Self { code, message: e.to_string() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}
