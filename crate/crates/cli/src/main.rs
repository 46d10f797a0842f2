use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod analyze;
mod eval;
mod plot;
mod report;
mod train;

#[derive(Parser)]
#[command(name = "demos", version, about = "Decentralized motor skill learning on BranchWorld")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write a run directory.
    Train(train::TrainArgs),
    /// Continue training a checkpoint with its mask fixed.
    Finetune(train::FinetuneArgs),
    /// Measure connection strengths of a checkpoint without modifying it.
    Analyze(analyze::AnalyzeArgs),
    /// Prune weak connections and write a new checkpoint.
    Decouple(analyze::DecoupleArgs),
    /// Evaluate a checkpoint, optionally under a motor malfunction.
    Eval(eval::EvalArgs),
    /// Compose policy fragments with scripted controllers and evaluate.
    Transfer(eval::TransferArgs),
    /// Render SVG plots from one or more run directories.
    Plot(PlotArgs),
}

#[derive(clap::Args)]
struct PlotArgs {
    /// Run directories; several are overlaid.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Output directory (defaults to the first run directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train::run(a),
        Command::Finetune(a) => train::run_finetune(a),
        Command::Analyze(a) => analyze::run_analyze(a),
        Command::Decouple(a) => analyze::run_decouple(a),
        Command::Eval(a) => eval::run_eval(a),
        Command::Transfer(a) => eval::run_transfer(a),
        Command::Plot(a) => plot::run(&a.runs, a.out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
