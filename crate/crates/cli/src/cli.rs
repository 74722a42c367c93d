//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use facies_core::obm::DatasetCase;

#[derive(Debug, Parser)]
#[command(name = "facies-gen", version, about = "Facies training-image GAN workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an object-based training set.
    Synth(SynthArgs),
    /// Train a model into a run directory.
    Train(TrainArgs),
    /// Draw realizations from a checkpoint.
    Sample(SampleArgs),
    /// Compare generated e-types against training data.
    Validate(ValidateArgs),
    /// Condition realizations on well observations.
    Condition(ConditionArgs),
    /// Regenerate the HTML report of a run directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// fluvial, deltaic, deltaic4, mixed2 or mixed3.
    #[arg(long)]
    pub case: DatasetCase,
    /// Images per sediment type: one value for all, or one per type.
    #[arg(long, value_delimiter = ',', required = true)]
    pub count: Vec<usize>,
    /// Grid size, `N` or `HxW`.
    #[arg(long, default_value = "64", value_parser = parse_size)]
    pub size: (usize, usize),
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Object-model parameters from the `[synth]` section.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output ensemble; a `.json` manifest is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a PNG sheet of the first N images.
    #[arg(long, default_value_t = 16)]
    pub preview: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// `[train]` settings; ignored keys are rejected.
    #[arg(long, conflicts_with = "resume")]
    pub config: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint taken on the same data.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Total epochs, overriding the configured or checkpointed value.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub count: usize,
    /// Fix the categorical code; uniform otherwise.
    #[arg(long)]
    pub code: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output ensemble; a `.json` manifest is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a PNG sheet of the first N samples.
    #[arg(long, default_value_t = 16)]
    pub preview: usize,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Training ensemble.
    #[arg(long)]
    pub train: PathBuf,
    /// Generated ensemble.
    #[arg(long)]
    pub gen: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// `[validate]` thresholds.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint whose classifier is scored on `--test`.
    #[arg(long, requires = "test")]
    pub bundle: Option<PathBuf>,
    /// Labelled held-out ensemble for the classifier.
    #[arg(long, requires = "bundle")]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConditionArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Well file, one `row,col,facies` per line.
    #[arg(long)]
    pub wells: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `[condition]` settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directory.
    pub run: PathBuf,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let parse = |t: &str| {
        t.trim()
            .parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| format!("invalid size {s:?}"))
    };
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((parse(h)?, parse(w)?)),
        None => {
            let n = parse(s)?;
            Ok((n, n))
        }
    }
}
