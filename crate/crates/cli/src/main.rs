//! `hetpart`: cost profiling, partitioning, batch-size sweeps, DQN training
//! and self-checks, all driven by JSON/CSV files.

mod commands;
mod files;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Diverged(_) => 4,
            CliError::Io(_) | CliError::Failed(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hetpart", version, about = "PL/AIE layer partitioning and mixed-precision DQN training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cost every node of a graph on each candidate device.
    Profile(ProfileArgs),
    /// Solve for the makespan-optimal PL/AIE assignment.
    Partition(PartitionArgs),
    /// Partition a network template at several batch sizes.
    Sweep(SweepArgs),
    /// Train DQN on CartPole, in FP32 and/or under an assignment.
    Train(TrainArgs),
    /// Run a built-in self-check suite.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Device and link profiles (JSON). Built-in defaults when omitted.
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// Compute graph or network template (JSON).
    #[arg(long)]
    graph: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Precomputed cost table (JSON). Derived from the profiles when omitted.
    #[arg(long)]
    cost: Option<PathBuf>,
    /// Per-device capacities (JSON object, e.g. {"PL": 1e7}); absent devices are unbounded.
    #[arg(long)]
    capacities: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Network template (JSON); its batch size is ignored.
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    batch_sizes: Vec<usize>,
    #[arg(long)]
    capacities: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training configuration (JSON). Defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Assignment file, or `partition` to solve for one.
    #[arg(long)]
    assignment: Option<String>,
    /// Run the FP32 baseline.
    #[arg(long)]
    fp32: bool,
    /// Number of consecutive seeds starting from the configured seed.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long)]
    capacities: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// small-ilp, formats or gradients.
    #[arg(long)]
    suite: String,
    /// Also write the result JSON to this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Profile(a) => commands::profile(&a),
        Command::Partition(a) => commands::partition(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Train(a) => commands::train(&a),
        Command::Verify(a) => commands::verify(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
