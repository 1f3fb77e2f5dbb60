use std::process::ExitCode;

use clap::Parser;
use rain_cli::{execute, Cli, ConfigError};

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(outcome) => ExitCode::from(outcome.exit_code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
