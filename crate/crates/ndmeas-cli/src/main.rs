//! Command-line front end: subcommand dispatch, config resolution, and the
//! exit-code contract (0 success, 1 invariant/check failure, 2 usage,
//! 3 I/O).

mod args;
mod manifest;
mod run;

use args::{Cli, Command};
use clap::Parser;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<ndmeas::modelfile::ModelFileError> for CliError {
    fn from(e: ndmeas::modelfile::ModelFileError) -> Self {
        match e {
            ndmeas::modelfile::ModelFileError::Io(io) => CliError::Io(io),
            other => CliError::Check(other.to_string()),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Check(_) => 1,
            CliError::Io(_) => 3,
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Validate(args) => run::cmd_validate(args),
        Command::Simulate(args) => run::cmd_simulate(args),
        Command::Estimate(args) => run::cmd_estimate(args),
        Command::Bounds(args) => run::cmd_bounds(args),
        Command::Purify(args) => run::cmd_purify(args),
        Command::Jumps(args) => run::cmd_jumps(args),
        Command::Histories(args) => run::cmd_histories(args),
        Command::Sweep(args) => run::cmd_sweep(args),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
