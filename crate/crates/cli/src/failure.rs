use std::fmt;

use prunekit::Error;

/// Bad arguments, configuration or I/O.
pub const EXIT_USAGE: u8 = 2;
/// The requested FLOPs target cannot be met.
pub const EXIT_INFEASIBLE: u8 = 3;
/// Numeric or runtime failure while working.
pub const EXIT_RUNTIME: u8 = 4;

/// Error carried up to `main` together with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { code: EXIT_USAGE, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Unreachable { .. } => EXIT_INFEASIBLE,
            Error::NonFinite(_) | Error::Divergence { .. } => EXIT_RUNTIME,
            _ => EXIT_USAGE,
        };
        Failure { code, message: e.to_string() }
    }
}

pub type CliResult<T> = Result<T, Failure>;

/// Attaches a path or subject to an error message, keeping its code.
pub trait Context<T> {
    fn context(self, what: impl fmt::Display) -> CliResult<T>;
}

impl<T, E: Into<Failure>> Context<T> for Result<T, E> {
    fn context(self, what: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| {
            let f = e.into();
            Failure { code: f.code, message: format!("{what}: {}", f.message) }
        })
    }
}
