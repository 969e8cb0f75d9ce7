//! `regather`: relation decomposition, composition, and dual-level
//! attention training for heterogeneous graphs, from the command line.

mod config;
mod manifest;
mod ops;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "regather",
    about = "Meta-path-free representation learning on heterogeneous graphs",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the relation set composed from a graph (orders 1..=K)
    Decompose(ops::DecomposeArgs),
    /// Train the dual-level attention model and report test F1
    Train(ops::TrainArgs),
    /// Evaluate a saved checkpoint on a dataset
    Eval(ops::EvalArgs),
    /// Train on the homogenized union graph (single relation, plus its
    /// transpose fold and diagonal); --max-order is ignored
    Baseline(ops::TrainArgs),
    /// Generate a synthetic labeled dataset with a planted relation rule
    Synth(ops::SynthArgs),
    /// Merge results.json files into one table
    Report(ops::ReportArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Decompose(args) => ops::run_decompose(args),
        Command::Train(args) => ops::run_train(args, false),
        Command::Eval(args) => ops::run_eval(args),
        Command::Baseline(args) => ops::run_train(args, true),
        Command::Synth(args) => ops::run_synth(args),
        Command::Report(args) => ops::run_report(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
