use clap::{Parser, Subcommand};

use crf_cli::commands::{
    run_eval, run_hist, run_prune, run_train, EvalArgs, HistArgs, PruneArgs, TrainArgs,
};
use crf_cli::sweep::{run_sweep_cmd, SweepArgs};

/// Crossbred random forest trainer and experiment runner.
///
/// Trains a bagged forest, decomposes it into root-to-leaf branches, scores
/// and prunes the branches on training data, and predicts by branch voting
/// with a fallback for uncovered inputs.
#[derive(Parser)]
#[command(name = "crf", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a forest, decompose it into scored branches, write a model file.
    Train(TrainArgs),
    /// Drop branches below a criterion threshold and write a new model file.
    Prune(PruneArgs),
    /// Classify a dataset with a model; print metrics and write per-row CSV.
    Eval(EvalArgs),
    /// Bin branch statistics of a model into a histogram CSV.
    Hist(HistArgs),
    /// Run the cluster x tree-count experiment grid and write a report CSV.
    Sweep(SweepArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => run_train(args),
        Command::Prune(args) => run_prune(args),
        Command::Eval(args) => run_eval(args),
        Command::Hist(args) => run_hist(args),
        Command::Sweep(args) => run_sweep_cmd(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
