//! Command implementations behind the `mtlsum` binary.

pub mod commands;
pub mod config;

use mtlsum::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CHECKPOINT: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Checkpoint(_) => EXIT_CHECKPOINT,
        Error::Numeric { .. } => EXIT_NUMERIC,
        _ => EXIT_INPUT,
    }
}
