//! `nucsel`: generate problems, run column selection, check bounds.

mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = config::Cli::parse();
    let res = output::init_threads().and_then(|_| commands::run(cli));
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nucsel: {e}");
            ExitCode::from(e.code())
        }
    }
}
