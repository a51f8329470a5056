use std::fmt;

use accguard_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// A failed command together with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn io(path: &std::path::Path, err: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_IO,
            message: format!("{}: {err}", path.display()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Bad input or configuration is a usage error, unreadable or corrupt files are I/O
/// errors, and everything that went wrong mid-computation is a numeric failure.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Config(_) | Error::Argument(_) | Error::Domain(_) | Error::Shape(_) | Error::Data(_) => EXIT_USAGE,
        Error::Io(_) | Error::Format(_) => EXIT_IO,
        Error::Numeric { .. } | Error::State(_) => EXIT_NUMERIC,
        Error::Context { .. } => unreachable!("root() strips context"),
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        CliError {
            code: exit_code(&err),
            message: err.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
