//! `maskpipe` command-line interface.
//!
//! Exit codes: 0 on success, 1 for invalid values or arguments, 2 for I/O
//! and malformed-file errors. Log level comes from `MASKPIPE_LOG`.

mod args;
mod dataset;
mod eval;
mod tools;
mod video;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn run(cli: Cli) -> maskpipe::Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Dataset(cmd) => dataset::run(cmd, g),
        Command::Eval(cmd) => eval::run(cmd, g),
        Command::Annotate(a) => video::annotate(a, g),
        Command::Bench(a) => video::bench(a, g),
        Command::Loss(cmd) => tools::loss(cmd, g),
        Command::Config(cmd) => tools::config(cmd, g),
        Command::Synth(cmd) => tools::synth(cmd, g),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MASKPIPE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
