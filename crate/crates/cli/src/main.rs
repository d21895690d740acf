//! `qkdsim`: command-line front end.
//!
//! Exit codes: 0 success, 1 internal error, 2 invalid input or
//! configuration, 3 protocol abort.

mod args;
mod commands;
mod config;
mod output;
mod setup;

use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;

use args::{Cli, Command};
use commands::{Aborted, InputError};
use config::{ConfigError, Settings};
use output::Output;
use qkdsim_core::QkdError;

pub const DEFAULT_SEED: u64 = 0;

fn run(cli: Cli) -> Result<()> {
    let mut settings = match &cli.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    cli.command.apply(&mut settings);
    settings.set("seed", cli.seed);
    let seed = settings.get_or("seed", DEFAULT_SEED)?;
    settings.set("seed", Some(seed));

    let name = cli.command.name();
    let out = Output::new(cli.out, cli.quiet, settings.hash(name))?;
    match cli.command {
        Command::Session(_) => commands::session(&settings, seed, &out),
        Command::Rates(_) => commands::rates(&settings, seed, &out),
        Command::Cascade(_) => commands::cascade_cmd(&settings, seed, &out),
        Command::G2(_) => commands::g2(&settings, seed, &out),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Aborted>() {
            return 3;
        }
        if cause.is::<ConfigError>() || cause.is::<InputError>() {
            return 2;
        }
        if let Some(q) = cause.downcast_ref::<QkdError>() {
            return match q {
                QkdError::InsufficientCounts(_) => 3,
                QkdError::ContractViolation(_) => 1,
                _ => 2,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
