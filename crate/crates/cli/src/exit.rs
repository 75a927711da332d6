use std::fmt;

use cdc_core::Error;

/// Stable process exit codes.
pub const USAGE: u8 = 2;
pub const IO: u8 = 3;
pub const NUMERIC: u8 = 4;
pub const COMPATIBILITY: u8 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: USAGE,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError {
            code: IO,
            message: message.into(),
        }
    }

    pub fn compatibility(message: impl Into<String>) -> Self {
        CliError {
            code: COMPATIBILITY,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub fn code_for(e: &Error) -> u8 {
    match e {
        Error::Io { .. }
        | Error::MalformedHeader { .. }
        | Error::RowDimensionMismatch { .. }
        | Error::UnknownSplitTag { .. }
        | Error::MalformedRow { .. }
        | Error::TruncatedFile { .. }
        | Error::BadMagic
        | Error::CheckpointMismatch(_) => IO,
        Error::ZeroVector { .. }
        | Error::InvalidSimplex { .. }
        | Error::DomainError { .. }
        | Error::TotalConflict { .. }
        | Error::NonFiniteLoss { .. } => NUMERIC,
        Error::DimensionMismatch { .. } | Error::ClassCountMismatch(..) => COMPATIBILITY,
        _ => USAGE,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError {
            code: code_for(&e),
            message: e.to_string(),
        }
    }
}
