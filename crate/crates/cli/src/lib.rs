//! Front end for qsynth: configuration, model files, and the `synth`,
//! `simulate`, `region` and `models` commands.

pub mod commands;
pub mod config;
pub mod model_file;
mod report;

use std::path::Path;

use thiserror::Error;

pub use commands::{cmd_models, cmd_region, cmd_simulate, cmd_synth, SimArgs, SimReport, SynthReport};
pub use config::RunConfig;

/// Exit status of a synth run whose goal contains no whole cell.
pub const EXIT_NO_GOAL: i32 = 3;
/// Exit status of a simulation that left the safety rectangle.
pub const EXIT_UNSAFE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Model(#[from] qsynth_core::models::ModelError),
    #[error(transparent)]
    Quant(#[from] qsynth_core::quantization::QuantError),
    #[error("controller source: {0}")]
    Parse(#[from] qsynth_core::codegen::ParseError),
    #[error("controller was generated for model hash {found}, this configuration has {expected}; refusing to run")]
    HashMismatch { expected: String, found: String },
    #[error(transparent)]
    Sim(#[from] qsynth_core::simulator::SimError),
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io { path: path.as_ref().display().to_string(), source }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}
