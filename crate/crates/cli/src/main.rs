//! `wxstyle` command-line front-end.
//!
//! Exit codes: 0 success, 2 usage, 3 data, 4 config, 5 numeric.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wxstyle::error::ErrorClass;

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] wxstyle::Error),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Core(e) => match e.class() {
                ErrorClass::Data => 3,
                ErrorClass::Config => 4,
                ErrorClass::Numeric => 5,
            },
        }
    }
}

#[derive(Parser)]
#[command(name = "wxstyle", version, about = "Style-biased multi-task weather attribute classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic style dataset (images, manifest, taxonomy).
    Synth(commands::SynthArgs),
    /// Leakage-free train/test split with temporal gaps per source.
    Split(commands::SplitArgs),
    /// Train a model and write a checkpoint.
    Train(commands::TrainArgs),
    /// Metrics of a checkpoint on a labelled dataset.
    Evaluate(commands::EvaluateArgs),
    /// Per-task predictions for single images.
    Infer(commands::InferArgs),
    /// Evolutionary hyperparameter search.
    Hpo(commands::HpoArgs),
    /// Frame-wise throughput with head toggling.
    Bench(commands::BenchArgs),
    /// Dump a checkpoint header and parameter counts.
    Inspect(commands::InspectArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Split(a) => commands::split(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Infer(a) => commands::infer(a),
        Command::Hpo(a) => commands::hpo(a),
        Command::Bench(a) => commands::bench(a),
        Command::Inspect(a) => commands::inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("wxstyle: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
