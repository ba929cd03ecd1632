//! Exit-code contract.
//!
//! | code | meaning                                   |
//! |------|-------------------------------------------|
//! | 0    | success                                   |
//! | 1    | estimation or numeric failure             |
//! | 2    | invalid flags or configuration            |
//! | 3    | I/O failure (missing/corrupt files)       |
//! | 4    | non-finite training loss                  |
//! | 5    | checkpoint / run-config mismatch          |

use ihn_core::Error;

pub const OK: i32 = 0;
pub const FAILURE: i32 = 1;
pub const USAGE: i32 = 2;
pub const IO: i32 = 3;
pub const NON_FINITE: i32 = 4;
pub const MISMATCH: i32 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(USAGE, message)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub fn code_for(e: &Error) -> i32 {
    match e.root() {
        Error::Config(_) | Error::ShapeMismatch(_) | Error::NonPow2Spatial(..) | Error::ImageTooSmall { .. } => USAGE,
        Error::Io(_) | Error::MissingFile(_) | Error::CorruptManifest { .. } | Error::Image(_) => IO,
        Error::NonFiniteLoss { .. } => NON_FINITE,
        Error::Checkpoint(_) => MISMATCH,
        _ => FAILURE,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::new(code_for(&e), e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(IO, e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
