//! Batch pipeline behind the `spotkal` binary.

pub mod commands;
pub mod config;
pub mod manifest;

use std::fmt;

pub use commands::{cmd_bench, cmd_identify, cmd_synthesize, cmd_tune, cmd_validate, Outcome};
pub use config::PipelineConfig;

/// Exit code for usage, configuration and input errors.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for numerical failures.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, message: format!("config: {}", msg.into()) }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, message: msg.into() }
    }

    /// Tags a library error with the pipeline stage that raised it.
    pub fn stage(stage: &str, e: spotkal::Error) -> Self {
        let code = if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_USAGE };
        CliError { code, message: format!("{stage}: {e}") }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}
