//! Subcommands wiring bundles, configs, training, feature extraction and
//! evaluation into reproducible runs.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use gprompt::adapter::Ablation;

mod commands;
pub mod config;
mod labels;

pub use config::{FilterSpec, RunConfig};
pub use labels::load_labels;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] gprompt::Error),
    #[error("gradient check failed: max relative error {0:e} above tolerance {1:e}")]
    CheckFailed(f64, f64),
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_owned(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        CliError::Core(gprompt::Error::InvalidArgument(msg.into()))
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        use gprompt::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(E::InvalidArgument(_) | E::Validation(_) | E::Format(_)) => 2,
            CliError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 3,
            CliError::Core(E::NotFound(_)) => 3,
            CliError::Core(E::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => 3,
            CliError::Core(E::NumericalFailure(_) | E::EmptyNeighborhood(_)) => 4,
            CliError::CheckFailed(..) => 5,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "gprompt",
    version,
    about = "Graph-aware prompt features for text-attributed graphs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the stage being run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic bundle with its truth sidecar and planted vocab sets.
    GenSynth(SynthArgs),
    /// Train the graph adapter on a bundle's masked-token records.
    TrainAdapter(TrainArgs),
    /// Decode prompt hidden states through an adapter into node features.
    ExtractFeatures(ExtractArgs),
    /// Score nodes by summed probability over vocab sets.
    ZeroShot(ZeroShotArgs),
    /// Repeated few-shot classification on node features.
    FewShot(FewShotArgs),
    /// Rank feature tokens by AUC against binary labels.
    Interpret(InterpretArgs),
    /// Finite-difference check of the adapter loss gradient.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub ablation: Option<Ablation>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub adapter: Option<PathBuf>,
    #[arg(long)]
    pub ablation: Option<Ablation>,
    #[arg(long)]
    pub prompt_id: Option<u32>,
    /// `std:M` or `vocab:PATH`.
    #[arg(long)]
    pub filter: Option<String>,
    #[arg(long, value_parser = ["arithmetic"])]
    pub pooling: Option<String>,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub positive_label: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ZeroShotArgs {
    #[command(flatten)]
    pub common: Common,
    /// Feature file; alternatively pass --bundle (with or without --adapter).
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub adapter: Option<PathBuf>,
    #[arg(long)]
    pub ablation: Option<Ablation>,
    /// JSON vocab set or array of vocab sets.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[command(flatten)]
    pub labels: LabelArgs,
}

#[derive(Debug, Args)]
pub struct FewShotArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[command(flatten)]
    pub labels: LabelArgs,
}

#[derive(Debug, Args)]
pub struct InterpretArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Only used for token strings.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    pub labels: LabelArgs,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub ablation: Option<Ablation>,
}

/// Runs one subcommand; human-readable progress goes to `log`.
pub fn run(cli: Cli, log: &mut dyn std::io::Write) -> Result<(), CliError> {
    match cli.command {
        Command::GenSynth(a) => commands::gen_synth(a, log),
        Command::TrainAdapter(a) => commands::train_adapter(a, log),
        Command::ExtractFeatures(a) => commands::extract_features(a, log),
        Command::ZeroShot(a) => commands::zero_shot(a, log),
        Command::FewShot(a) => commands::few_shot(a, log),
        Command::Interpret(a) => commands::interpret(a, log),
        Command::GradCheck(a) => commands::grad_check(a, log),
    }
}
