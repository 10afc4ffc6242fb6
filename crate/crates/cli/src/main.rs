mod args;
mod commands;
mod config;
mod error;
mod lists;
mod manifest;
mod selfcheck;

use std::process::ExitCode;

use clap::Parser;

use crate::args::Cli;
use crate::error::CliError;

fn main() -> ExitCode {
    let raw: Vec<String> = std::env::args().collect();
    match run(raw) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(text)) => {
            eprint!("{text}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(raw: Vec<String>) -> Result<(), CliError> {
    let argv = config::merge_config(raw)?;
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            // help and version go to stdout with status 0; the rest are usage errors
            if !e.use_stderr() {
                e.exit();
            }
            return Err(CliError::Usage(e.render().to_string()));
        }
    };
    commands::dispatch(cli, &argv[1..])
}
