//! Command-line front end of the accguard pipeline.

pub mod args;
pub mod commands;
pub mod config_file;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod repro;

use std::ffi::OsString;
use std::time::Instant;

use clap::{CommandFactory, Parser};

use crate::args::{Cli, Command, ReplayArgs};
use crate::error::{CliError, CliResult, EXIT_OK};
use crate::manifest::{manifest_path, RunManifest};

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run(argv: Vec<OsString>) -> i32 {
    match parse(argv).and_then(|cmd| cmd.map_or(Ok(()), execute)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            if !e.message.is_empty() {
                eprintln!("accguard: {e}");
            }
            e.code
        }
    }
}

/// The resolved command, or `None` when clap already handled `--help`/`--version`.
pub fn parse(argv: Vec<OsString>) -> CliResult<Option<Command>> {
    let names: Vec<String> = Cli::command()
        .get_subcommands()
        .map(|c| c.get_name().to_string())
        .collect();
    let argv = config_file::expand(argv, &names)?;
    match Cli::try_parse_from(argv) {
        Ok(cli) => Ok(Some(cli.command)),
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            if code == EXIT_OK {
                Ok(None)
            } else {
                Err(CliError {
                    code: error::EXIT_USAGE,
                    message: String::new(),
                })
            }
        }
    }
}

/// Runs one command and writes its manifest.
pub fn execute(command: Command) -> CliResult<()> {
    let started = Instant::now();
    let (resolved, record) = match command {
        Command::Replay(r) => return replay(r),
        Command::Simulate(a) => commands::simulate(a)?,
        Command::Fd(a) => commands::fd(a)?,
        Command::Dataset(a) => commands::dataset(a)?,
        Command::Train(a) => commands::train(a)?,
        Command::Calibrate(a) => commands::calibrate(a)?,
        Command::Detect(a) => commands::detect(a)?,
        Command::Evaluate(a) => commands::evaluate(a)?,
        Command::ReproTable1(a) => repro::repro(a)?,
    };
    let manifest = RunManifest::new(
        &resolved,
        record.seeds,
        record.inputs,
        record.outputs,
        started.elapsed().as_secs_f64(),
    );
    manifest.write(&manifest_path(&record.primary, record.primary_is_dir, resolved.name()))
}

fn replay(r: ReplayArgs) -> CliResult<()> {
    let manifest = RunManifest::read(&r.manifest)?;
    let mut command = manifest.command;
    if let Some(jobs) = r.jobs {
        match &mut command {
            Command::Fd(a) => a.jobs = Some(jobs),
            Command::Dataset(a) => a.jobs = Some(jobs),
            Command::Calibrate(a) => a.jobs = Some(jobs),
            Command::Detect(a) => a.jobs = Some(jobs),
            Command::ReproTable1(a) => a.jobs = Some(jobs),
            _ => {}
        }
    }
    if let Command::Replay(_) = command {
        return Err(CliError::usage("a manifest cannot replay another replay"));
    }
    execute(command)
}
