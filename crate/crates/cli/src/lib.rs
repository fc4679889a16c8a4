//! Reproducible runs of the detection toolkit: every command resolves a
//! configuration, writes it next to its outputs and derives all randomness
//! from one master seed.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;

pub use args::{Cli, Command};
pub use config::RunConfig;
pub use error::{CliError, Result};

/// Resolves the configuration and runs the selected command.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.resolve()?;
    match &cli.command {
        Command::Generate { .. } => commands::generate(&cfg).map(drop),
        Command::Train { .. } => commands::train(&cfg).map(drop),
        Command::Eval { .. } => {
            let report = commands::evaluate(&cfg)?;
            print!("{}", report.to_text());
            Ok(())
        }
        Command::Analyze { .. } => {
            let report = commands::analyze(&cfg)?;
            print!("{}", report.to_table());
            Ok(())
        }
        Command::Sensitivity { .. } => commands::sensitivity(&cfg).map(drop),
    }
}
