use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use inn_core::pipeline::SplitName;

mod benchmark;
mod commands;
mod manifest;

/// Interval neural networks for system identification.
#[derive(Debug, Parser)]
#[command(name = "inn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write model.json, the epoch log and a manifest.
    Train(TrainArgs),
    /// Print test-style metrics for one split as JSON.
    Eval(EvalArgs),
    /// Write the closed-loop prediction of one split as CSV.
    Predict(PredictArgs),
    /// Export elasticity heatmaps of an interval model.
    Analyze(AnalyzeArgs),
    /// Run a suite of cells over several seeds and tabulate mean and std.
    Benchmark(BenchmarkArgs),
    /// Generate a series from the bundled first-order plant.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration (JSON).
    #[arg(long, required_unless_present = "manifest")]
    pub config: Option<PathBuf>,
    /// Re-run the configuration recorded in a previous manifest.
    #[arg(long, conflicts_with = "config")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub strategy: Option<String>,
    /// Model kind: ilstm, inode or feedforward.
    #[arg(long)]
    pub model: Option<String>,
    /// Positivity map for the margins: abs or relu.
    #[arg(long)]
    pub trick: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory. Defaults to a run name under $INN_OUTPUT_ROOT.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = "INN_OUTPUT_ROOT", default_value = "runs", hide_env_values = true)]
    pub output_root: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with columns u,y covering the full series the model was split from.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: SplitName,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: SplitName,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub suite: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Maximum number of runs in flight.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, env = "INN_OUTPUT_ROOT", default_value = "runs", hide_env_values = true)]
    pub output_root: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub hold_min: Option<usize>,
    #[arg(long)]
    pub hold_max: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Benchmark(a) => benchmark::run(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
