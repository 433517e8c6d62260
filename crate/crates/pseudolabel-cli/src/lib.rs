//! Library half of the `pseudolabel` experiment harness.
//!
//! The binary in `main.rs` is a thin argument parser over two commands:
//!
//! * [`run::cmd_run`] executes every (criterion, seed) cell of a TOML
//!   experiment file and writes trajectory and summary CSVs, and
//! * [`compare::cmd_compare`] turns one or more summary files into a
//!   per-criterion table with paired differences against a baseline.
//!
//! Keeping the logic in a library crate lets the integration tests parse
//! configs and drive commands in-process, while exit-code behavior is
//! checked against the installed binary.

use std::fmt;

pub mod compare;
pub mod config;
pub mod run;

/// Environment variable that re-roots all outputs: when set and non-empty,
/// the configured `output_dir` is joined under it. An absolute `output_dir`
/// ignores the override (path join semantics), so configs meant to be
/// re-rooted should use relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "PSEUDOLABEL_OUTPUT_ROOT";

/// Failure classes of the harness, one per documented exit code.
///
/// The process exit codes are a stable contract: 0 success, 1 runtime
/// failure, 2 invalid configuration or comparison input, 3 refusal to
/// overwrite existing outputs without `--force`.
#[derive(Debug)]
pub enum CliError {
    /// Invalid experiment file or comparison input; exit code 2.
    Config(String),
    /// Environment or engine failure during an otherwise valid run; exit 1.
    Runtime(String),
    /// Outputs already exist and `--force` was not given; exit 3.
    Refusal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
            CliError::Refusal(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Runtime(msg) => write!(f, "runtime error: {msg}"),
            CliError::Refusal(msg) => write!(f, "refusing: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}
