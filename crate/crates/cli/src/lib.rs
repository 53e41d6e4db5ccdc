//! Command-line front end: configuration, run directories and one entry
//! point per mode.

pub mod args;
pub mod artifacts;
pub mod commands;
pub mod config;

use thiserror::Error;

pub use args::{Cli, Command};
pub use artifacts::{emit_curves, CurveError, Evaluation, MetricsDocument};
pub use config::{parse_weights, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Protocol(_) => 3,
        }
    }
}

/// Resolves the configuration and runs the selected mode.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = cli.resolve()?;
    match &cli.command {
        Command::TrainLocal(_) => commands::train_local(&cfg),
        Command::Federate(_) => commands::federate(&cfg),
        Command::Serve => commands::serve(&cfg),
        Command::Client(_) => commands::client(&cfg),
        Command::Evaluate(_) => commands::evaluate_model(&cfg),
        Command::ExtractPatches(_) => commands::extract(&cfg),
        Command::Split(_) => commands::split(&cfg),
        Command::Synthesize(_) => commands::synthesize(&cfg),
    }
}
