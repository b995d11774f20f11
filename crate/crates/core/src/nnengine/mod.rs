//! A small sequential feed-forward network (dense, ReLU, softmax, dropout)
//! with a per-model stochastic mode for MC-Dropout sampling.

mod arch;
mod layer;
mod model;
mod predict;
mod train;

pub use arch::Architecture;
pub use layer::{Dense, Dropout, Layer, LayerKind, LayerSpec, StochasticMode};
pub use model::{Converted, SequentialModel};
pub use predict::{PredictOptions, ReplicatedBatches, DEFAULT_BATCH_SIZE, DEFAULT_NUM_SAMPLES};
pub use train::{DenseGradient, Loss, Targets, TrainConfig, TrainingHistory};

pub(crate) use predict::apply_sampled;

use thiserror::Error;

use crate::quantifiers::QuantifierError;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid layer {layer}: {reason}")]
    Construction { layer: usize, reason: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged (non-finite loss) in epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error(transparent)]
    Quantifier(#[from] QuantifierError),
}

pub type Result<T> = std::result::Result<T, NnError>;
