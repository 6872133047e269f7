//! The `normmark` command line: data generation, training, evaluation and
//! the sweep/ablation/heatmap harnesses, all driven by one resolved
//! [`RunConfig`].

pub mod commands;
pub mod config;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use normmark::model::Variant;

pub use config::RunConfig;

/// Process exit codes.
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(normmark::Error),
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(_) => EXIT_USAGE,
            CliError::Diverged(_) => EXIT_DIVERGED,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Diverged(m) => write!(f, "training diverged: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<normmark::Error> for CliError {
    fn from(e: normmark::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "normmark", version, about = "Norm recognition experiments on segmented dialogues")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus with known transitions.
    GenData(GenDataArgs),
    /// Train one model and save its checkpoint and history.
    Train(TrainArgs),
    /// Score a checkpoint on a labeled corpus.
    Eval(EvalArgs),
    /// Train across Markov orders and seeds.
    Sweep(SweepArgs),
    /// Train each variant across seeds.
    Ablate(AblateArgs),
    /// Export a label transition heatmap.
    Heatmap(HeatmapArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Shared {
    /// Config file (`key = value` lines or a `run_config.json` echo).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub markov_order: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub label_rate: Option<f64>,
    /// Override any config key, e.g. `--set model.d_z=8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub shared: Shared,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub dialogues: Option<usize>,
    #[arg(long)]
    pub segments: Option<usize>,
    #[arg(long)]
    pub tokens: Option<usize>,
    #[arg(long)]
    pub signal: Option<f64>,
    #[arg(long)]
    pub concentration: Option<f64>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub signature_size: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub shared: Shared,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub shared: Shared,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Labeled corpus; defaults to the configured test split.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Encode with this vocabulary instead of the checkpoint's.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub exclude_none: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub shared: Shared,
    #[arg(long, value_delimiter = ',')]
    pub orders: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub shared: Shared,
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<Variant>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Args)]
pub struct HeatmapArgs {
    #[command(flatten)]
    pub shared: Shared,
    /// Count label bigrams in a corpus instead of reading a checkpoint.
    #[arg(long, conflicts_with = "checkpoint")]
    pub from_corpus: bool,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Corpus for `--from-corpus`; defaults to `corpus.jsonl` in the data directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Ground truth from `gen-data`; prints per-row total variation.
    #[arg(long)]
    pub compare: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::Heatmap(a) => commands::heatmap(&a),
    }
}
