//! Experiment harness: verification suites, TOML configs, fitting, prediction
//! and JSONL traces.

pub mod check;
pub mod config;
pub mod fit;
pub mod predict;
pub mod trace;

use crate::error::Error;

/// Process exit codes shared by every subcommand.
pub mod exit {
    pub const OK: i32 = 0;
    /// A check suite reported failures.
    pub const CHECK_FAILED: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const NUMERICAL: i32 = 4;
}

/// Maps an error to its exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) | Error::DimensionMismatch { .. } => exit::CONFIG,
        Error::Data(_) | Error::Io(_) | Error::MissingArtifact(_) => exit::DATA,
        Error::NotPositiveDefinite(_) | Error::ManifoldExit(_) | Error::NonFinite(_) | Error::ChainTooShort { .. } => exit::NUMERICAL,
    }
}
