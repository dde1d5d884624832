//! `ladg`: generate data, train ERM/DANN/LADG, evaluate checkpoints, and
//! run propagation or compactness analysis on feature files.
//!
//! Exit codes: 0 on success, 1 on runtime errors, 2 on usage errors.

mod compactness;
mod eval;
mod output;
mod propagate;
mod synth;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use output::UsageError;

#[derive(Parser)]
#[command(name = "ladg", version, about = "Localized adversarial domain generalization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-domain dataset as CSV.
    Synth(synth::Args),
    /// Train a model and write metrics, feature dumps and a checkpoint.
    Train(train::Args),
    /// Evaluate a checkpoint on one split of a dataset.
    Eval(eval::Args),
    /// Propagate domain labels over the K-NN graph of a feature file.
    Propagate(propagate::Args),
    /// Compactness metrics of a feature file or a directory of dumps.
    Compactness(compactness::Args),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth::run(a),
        Command::Train(a) => train::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Propagate(a) => propagate::run(a),
        Command::Compactness(a) => compactness::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
