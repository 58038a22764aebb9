//! Command-line frontend: configured pipelines, torus validation by forward
//! simulation, and plain-text data export.

pub mod commands;
pub mod config;
pub mod pipeline;

use torcont::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CONVERGENCE: i32 = 3;
pub const EXIT_NOT_FOUND: i32 = 4;

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Input(_) | Error::Type(_) => EXIT_CONFIG,
        Error::Convergence { .. } | Error::Singular(_) | Error::Integration { .. } | Error::BranchPoint(_) => {
            EXIT_CONVERGENCE
        }
        Error::NotFound(_) => EXIT_NOT_FOUND,
        Error::Format(_) | Error::Io(_) | Error::Json(_) => EXIT_FAILURE,
    }
}
