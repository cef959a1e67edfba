//! `ibnr`: batch front end for the reserving engine.
//!
//! Exit status: 0 success, 2 usage or input error, 3 numerical failure,
//! 4 missing fit artifact.

mod commands;
mod config;
mod error;
mod output;

use std::process::ExitCode;

use clap::Parser;

use config::{Cli, Command, RunConfig};

fn run(cli: &Cli) -> Result<(), error::CliError> {
    let cfg = RunConfig::resolve(&cli.flags)?;
    match cli.command {
        Command::Ingest => commands::ingest(&cfg),
        Command::Fit => commands::fit(&cfg),
        Command::Project => commands::project(&cfg),
        Command::Diagnose => commands::diagnose(&cfg),
        Command::Report => commands::report(&cfg),
        Command::Simulate => commands::simulate(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
