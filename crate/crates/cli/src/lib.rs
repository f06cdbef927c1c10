//! Experiment driver: configuration, presets, training sweeps, trace
//! analysis and stability reports.

pub mod analyze;
pub mod config;
pub mod experiment;
pub mod presets;
pub mod stability;

use coadapt_core::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numeric(_) | Error::Stability(_) => EXIT_NUMERIC,
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}
