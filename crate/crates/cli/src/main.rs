// SPDX-License-Identifier: MIT OR Apache-2.0

//! `saesel`: synth, train, extract, select and stats subcommands.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error.

mod commands;
mod config;
mod error;

use std::process::ExitCode;

use config::{Settings, Sub};
use error::CliError;

fn run() -> Result<(), CliError> {
    let matches = config::command().get_matches();
    let (name, sub_matches) = matches.subcommand().expect("subcommand is required");
    let sub = Sub::ALL
        .into_iter()
        .find(|s| s.name() == name)
        .expect("only known subcommands parse");
    let settings = Settings::resolve(sub, sub_matches)?;
    match sub {
        Sub::Train => commands::train(&settings),
        Sub::Extract => commands::extract(&settings),
        Sub::Select => commands::select_cmd(&settings),
        Sub::Stats => commands::stats(&settings),
        Sub::Synth => commands::synth(&settings),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
