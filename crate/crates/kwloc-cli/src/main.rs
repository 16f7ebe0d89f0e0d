//! `kwloc` — batch driver for the keyword localisation toolkit.
//!
//! Exit codes: 0 success, 1 validation error (bad flags, malformed inputs),
//! 2 runtime error (I/O mid-run, training divergence, failed check).

mod commands;
mod fileconfig;
mod manifest;
mod svg;

use clap::{Parser, Subcommand};
use kwloc_core::CoreError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "{m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Divergence(_) | CoreError::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

#[derive(Parser)]
#[command(
    name = "kwloc",
    about = "Keyword detection and localisation on synthetic feature streams",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with known word spans.
    Synth(commands::synth::SynthArgs),
    /// Train one model variant under bag-of-words or visual supervision.
    Train(commands::train::TrainArgs),
    /// Evaluate a trained model: detection or localisation P/R/F1.
    Eval(commands::eval_cmd::EvalArgs),
    /// Localise one keyword in one utterance, optionally rendering an SVG.
    Localise(commands::localise::LocaliseArgs),
    /// Train all four variants under both supervisions and tabulate scores.
    Compare(commands::compare::CompareArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(commands::gradcheck_cmd::GradcheckArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help / --version print and succeed; anything else is a
            // validation failure.
            use clap::error::ErrorKind;
            let kind = e.kind();
            let _ = e.print();
            return if matches!(kind, ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    let result = match cli.command {
        Command::Synth(args) => commands::synth::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Eval(args) => commands::eval_cmd::run(args),
        Command::Localise(args) => commands::localise::run(args),
        Command::Compare(args) => commands::compare::run(args),
        Command::Gradcheck(args) => commands::gradcheck_cmd::run(args),
    };
    match result {
        Ok(code) => code,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

/// Threshold θ must lie in [0, 1].
pub fn check_theta(theta: f64) -> CliResult<()> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(validation(format!("--theta {theta} outside [0, 1]")));
    }
    Ok(())
}

/// Worker cap for parallel sections, from KWLOC_THREADS (default 2, min 1).
pub fn thread_cap() -> usize {
    std::env::var("KWLOC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .map(|n| n.max(1))
        .unwrap_or(2)
}

/// Resolve a data directory argument.
pub fn existing_dir(path: &PathBuf) -> CliResult<()> {
    if !path.is_dir() {
        return Err(validation(format!(
            "data directory {} does not exist",
            path.display()
        )));
    }
    Ok(())
}
