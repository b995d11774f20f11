use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use uqwiz::ensemble::ContextHandlerKind;
use uqwiz::nnengine::{Architecture, DEFAULT_NUM_SAMPLES};
use uqwiz::persist::DatasetSource;
use uqwiz::quantifiers::Quantifier;

/// Uncertainty quantification for small feed-forward networks.
#[derive(Debug, Parser)]
#[command(name = "uqwiz", version)]
pub struct Cli {
    /// Seed for data generation, initialization, training and sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Model file (.uwm) or ensemble directory.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,

    /// CSV file with a final `label` column, or blobs:<N>,<C>,<spread>.
    #[arg(long, global = true)]
    pub dataset: Option<DatasetSource>,

    /// Where to write the report (default: stdout).
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,

    /// Fraction of the dataset held out from training. Training uses the
    /// leading rows, predict and evaluate use the held-out tail.
    #[arg(long, global = true, default_value_t = 0.0)]
    pub holdout: f64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Hidden layers, e.g. "dense:16,8 dropout:0.1".
    #[arg(long)]
    pub arch: Architecture,

    #[arg(long, default_value_t = 50)]
    pub epochs: usize,

    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,

    #[arg(long = "lr", default_value_t = 0.05)]
    pub learning_rate: f64,
}

#[derive(Debug, Args)]
pub struct PoolArgs {
    /// Worker processes; 0 runs every model in this process.
    #[arg(long, default_value_t = 0)]
    pub num_processes: usize,

    /// none, dynamic_growth or device_allocator:<id>=<capacity>,...
    #[arg(long, default_value = "dynamic_growth")]
    pub context: ContextHandlerKind,

    /// Models a worker handles before it is replaced.
    #[arg(long, default_value_t = 1)]
    pub respawn_after: usize,
}

#[derive(Debug, Args)]
pub struct QuantifyArgs {
    /// Quantifier alias; repeat for several, order is kept.
    #[arg(long = "quantifier", required = true)]
    pub quantifiers: Vec<Quantifier>,

    /// Forward passes per input for sampling-based quantifiers.
    #[arg(long, default_value_t = DEFAULT_NUM_SAMPLES)]
    pub num_samples: usize,

    /// Worker processes when --model is an ensemble.
    #[arg(long, default_value_t = 0)]
    pub num_processes: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a single MC-Dropout model and save it to --model.
    TrainStochastic {
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train a lazily persisted ensemble into --model-dir.
    TrainEnsemble {
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        pool: PoolArgs,
        #[arg(long, default_value_t = 5)]
        num_models: usize,
        /// Ensemble directory (defaults to --model).
        #[arg(long)]
        model_dir: Option<PathBuf>,
    },
    /// Predict the dataset's inputs and report quantified scores.
    Predict {
        #[command(flatten)]
        quantify: QuantifyArgs,
        /// Report confidences (true) or uncertainties (false) instead of
        /// each quantifier's native kind.
        #[arg(long)]
        as_confidence: Option<bool>,
    },
    /// Report accuracy and misprediction-detection AUROC per quantifier.
    Evaluate {
        #[command(flatten)]
        quantify: QuantifyArgs,
    },
    /// Time ensemble training for several worker counts.
    Benchmark {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value_t = 8)]
        num_models: usize,
        /// Comma-separated worker counts; 0 is always included.
        #[arg(long, default_value = "0,2,4")]
        processes_list: String,
        #[arg(long, default_value = "dynamic_growth")]
        context: ContextHandlerKind,
        #[arg(long, default_value_t = 1)]
        respawn_after: usize,
    },
}
