//! `cat-cli`: data generation, training, evaluation and experiment drivers.
//!
//! Run configuration is layered: built-in defaults, then `--config FILE`,
//! then `CAT_<KEY>` environment variables, then `--set KEY=VALUE` flags.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "cat-cli",
    version,
    about = "Attention-policy classifier for irregularly-sampled time series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Run-configuration sources shared by the training commands.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Flat `key = value` config file (see `cat-cli keys`)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set delta=0.26`; repeatable, applied last
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic M/Π pattern dataset
    GenMpi(commands::GenMpiArgs),
    /// Turn a regularly sampled CSV stream into event-triggered series
    Probe(commands::ProbeArgs),
    /// Randomly keep a fraction of each series' observations
    Downsample(commands::DownsampleArgs),
    /// Train the classifier; writes a checkpoint and per-epoch metrics
    Train(commands::TrainArgs),
    /// Score a checkpoint on a dataset
    Eval(commands::EvalArgs),
    /// Sweep signal width, receptor width or K over repeated runs
    Sweep(commands::SweepArgs),
    /// Compare learned moments against random moments
    Ablate(commands::AblateArgs),
    /// Time training epochs of the classifier and imputation baselines
    Bench(commands::BenchArgs),
    /// List every run-configuration key with its default
    Keys,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenMpi(a) => commands::gen_mpi(a),
        Command::Probe(a) => commands::probe(a),
        Command::Downsample(a) => commands::downsample(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Bench(a) => commands::bench(a),
        Command::Keys => commands::keys(),
    };
    match result {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
