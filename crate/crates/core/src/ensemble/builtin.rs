//! Tasks available in every [`Registry::with_builtins`] registry.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::task::{Registry, TaskContext, TaskResult};
use crate::nnengine::{Architecture, Loss, SequentialModel, TrainConfig, TrainingHistory};
use crate::persist::DatasetSource;

/// Supplier: trains a fresh model, returns its [`TrainingHistory`].
pub const TRAIN: &str = "uqwiz.train";
/// Consumer: deterministic forward pass over [`ForwardParams::inputs`].
pub const FORWARD: &str = "uqwiz.forward";
/// Mapper: returns the model unchanged.
pub const IDENTITY: &str = "uqwiz.identity";
/// Consumer: number of layers.
pub const LAYER_COUNT: &str = "uqwiz.layer_count";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub arch: Architecture,
    pub dataset: DatasetSource,
    /// Seed for generated datasets; shared by all members so they see the same data.
    pub data_seed: u64,
    /// Leading fraction of the dataset used for training.
    pub train_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl TrainParams {
    pub fn new(arch: Architecture, dataset: DatasetSource) -> Self {
        let defaults = TrainConfig::default();
        Self {
            arch,
            dataset,
            data_seed: 0,
            train_fraction: 1.0,
            epochs: defaults.epochs,
            batch_size: defaults.batch_size,
            learning_rate: defaults.learning_rate,
        }
    }
}

/// Builds and trains one member. Initialization and shuffling use `seed`.
pub fn train_member(params: &TrainParams, seed: u64) -> TaskResult<(SequentialModel, TrainingHistory)> {
    let data = params.dataset.load(params.data_seed)?;
    let (train, _) = data.split(params.train_fraction);
    let problem = train.problem_type();
    let specs = params.arch.layer_specs(train.num_features(), train.num_outputs, problem);
    let mut model = SequentialModel::build(specs, seed)?;
    let config = TrainConfig {
        epochs: params.epochs,
        batch_size: params.batch_size.min(train.len()).max(1),
        learning_rate: params.learning_rate,
        loss: Loss::for_problem(problem),
        seed,
    };
    let history = model.fit(train.features.view(), &train.targets, &config)?;
    Ok((model, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardParams {
    pub inputs: Vec<Vec<f64>>,
}

impl ForwardParams {
    pub fn from_array(x: ndarray::ArrayView2<f64>) -> Self {
        Self {
            inputs: x.rows().into_iter().map(|r| r.to_vec()).collect(),
        }
    }
}

fn forward(ctx: &TaskContext, model: &SequentialModel) -> TaskResult<Vec<Vec<f64>>> {
    let p: ForwardParams = ctx.params()?;
    let width = p.inputs.first().map_or(model.input_dim(), Vec::len);
    let x = Array2::from_shape_vec((p.inputs.len(), width), p.inputs.concat())?;
    let y = model.forward(x.view())?;
    Ok(y.rows().into_iter().map(|r| r.to_vec()).collect())
}

pub(crate) fn register(r: &mut Registry) {
    r.supplier(TRAIN, |ctx| {
        let params: TrainParams = ctx.params()?;
        train_member(&params, ctx.seed)
    })
    .consumer(FORWARD, forward)
    .mapper(IDENTITY, |_, m| Ok((m, ())))
    .consumer(LAYER_COUNT, |_, m| Ok(m.layers().len()));
}
