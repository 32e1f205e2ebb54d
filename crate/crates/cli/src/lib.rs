//! Orchestration for the `asncfl` binary: configuration, pretraining,
//! scenario generation, batch runs and reports.

pub mod commands;
pub mod config;
pub mod pipeline;

pub use asncfl_core as core;
pub use config::RunConfig;

/// Environment variable that overrides the output directory of the config
/// file. The `--out` flag still wins over it.
pub const OUT_ENV: &str = "ASNCFL_OUT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config or input files.
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}
