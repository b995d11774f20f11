use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::de::DeserializeOwned;
use serde_json::Value;

use super::builtin::{ForwardParams, FORWARD};
use super::context::{ContextHandlerKind, PoolConfig};
use super::layout::{self, DirLock, Manifest, MANIFEST_VERSION};
use super::pool::{run_pool, PoolRun, PoolStats, Runtime};
use super::task::{remove_if_exists, value_to_matrix, TaskKind, TaskRef};
use super::{EnsembleError, Result};
use crate::nnengine::{apply_sampled, SequentialModel};
use crate::persist::{self, PersistError};
use crate::quantifiers::{
    self, IntoQuantifier, ProblemType, QuantifiedResult, Quantifier, RegressionSamples, SampledOutputs,
};

/// Typed per-model results, ordered by model id, plus pool statistics.
#[derive(Debug, Clone)]
pub struct TaskRun<T> {
    pub results: Vec<T>,
    pub stats: PoolStats,
}

/// A Deep Ensemble whose members live on disk as `model_<i>.uwm`.
///
/// The handle holds no model. Every operation runs a named task (see
/// [`Registry`](super::Registry)) once per member, in the calling process or
/// in worker processes, and models only move through their files.
#[derive(Debug, Clone)]
pub struct LazyEnsemble {
    path: PathBuf,
    num_models: usize,
    default_context: ContextHandlerKind,
    runtime: Runtime,
}

impl LazyEnsemble {
    pub fn new(path: impl Into<PathBuf>, num_models: usize) -> Result<Self> {
        if num_models < 2 {
            return Err(EnsembleError::InvalidConfig(format!(
                "an ensemble needs at least 2 models, got {num_models}"
            )));
        }
        Ok(Self {
            path: path.into(),
            num_models,
            default_context: ContextHandlerKind::default(),
            runtime: Runtime::default(),
        })
    }

    /// Opens an existing ensemble directory through its manifest.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let manifest = Manifest::read(&path)?;
        Self::new(path, manifest.num_models)
    }

    pub fn with_context(mut self, context: ContextHandlerKind) -> Self {
        self.default_context = context;
        self
    }

    pub fn with_runtime(mut self, runtime: Runtime) -> Self {
        self.runtime = runtime;
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn num_models(&self) -> usize {
        self.num_models
    }

    pub fn default_context(&self) -> &ContextHandlerKind {
        &self.default_context
    }

    pub fn runtime(&self) -> &Runtime {
        &self.runtime
    }

    pub fn model_path(&self, model_id: usize) -> PathBuf {
        layout::model_path(&self.path, model_id)
    }

    /// Loads one member, e.g. to apply a point-predictor quantifier to it.
    pub fn load_model(&self, model_id: usize) -> Result<SequentialModel> {
        Ok(persist::load_model(&self.model_path(model_id))?)
    }

    fn ids(&self) -> Vec<usize> {
        (0..self.num_models).collect()
    }

    fn run(&self, kind: TaskKind, task: &TaskRef, pool: &PoolConfig) -> Result<PoolRun> {
        let context = pool.context.as_ref().unwrap_or(&self.default_context);
        run_pool(&self.runtime, &self.path, kind, task, &self.ids(), pool, context)
    }

    fn require_models(&self) -> Result<()> {
        for id in 0..self.num_models {
            let path = self.model_path(id);
            if !path.is_file() {
                return Err(EnsembleError::MissingModel { model_id: id, path });
            }
        }
        Ok(())
    }

    fn clear_staged(&self) -> Result<()> {
        for id in 0..self.num_models {
            let staged = layout::staged_path(&self.path, id);
            remove_if_exists(&staged).map_err(|e| PersistError::io(&staged, e))?;
        }
        Ok(())
    }

    fn commit(&self, id: usize) -> Result<()> {
        let staged = layout::staged_path(&self.path, id);
        fs::rename(&staged, self.model_path(id)).map_err(|e| PersistError::io(&staged, e).into())
    }

    /// Runs `supplier` for every model id and persists the returned models.
    ///
    /// Members whose supplier failed leave no file behind; the error lists
    /// them after every other member has finished.
    pub fn create<T: DeserializeOwned>(&self, supplier: &TaskRef, pool: &PoolConfig) -> Result<TaskRun<T>> {
        fs::create_dir_all(&self.path).map_err(|e| PersistError::io(&self.path, e))?;
        let _lock = DirLock::acquire(&self.path)?;
        if let Some(id) = (0..self.num_models).find(|&i| self.model_path(i).exists()) {
            return Err(EnsembleError::NotEmpty(self.model_path(id)));
        }
        self.clear_staged()?;
        Manifest {
            version: MANIFEST_VERSION,
            num_models: self.num_models,
            base_seed: pool.base_seed,
        }
        .write(&self.path)?;

        let run = self.run(TaskKind::Supplier, supplier, pool)?;
        for (id, outcome) in &run.outcomes {
            if outcome.is_ok() {
                self.commit(*id)?;
            }
        }
        self.clear_staged()?;
        finish(TaskKind::Supplier, run)
    }

    /// Passes every member through `mapper` and persists the results. Either
    /// all members are replaced or, if any mapper fails, none is.
    pub fn modify<T: DeserializeOwned>(&self, mapper: &TaskRef, pool: &PoolConfig) -> Result<TaskRun<T>> {
        self.require_models()?;
        let _lock = DirLock::acquire(&self.path)?;
        self.clear_staged()?;
        let run = self.run(TaskKind::Mapper, mapper, pool)?;
        if run.failed_ids().is_empty() {
            for id in 0..self.num_models {
                self.commit(id)?;
            }
        }
        self.clear_staged()?;
        finish(TaskKind::Mapper, run)
    }

    /// Runs `consumer` on every member without changing any model file.
    pub fn consume<T: DeserializeOwned>(&self, consumer: &TaskRef, pool: &PoolConfig) -> Result<TaskRun<T>> {
        self.require_models()?;
        let _lock = DirLock::acquire(&self.path)?;
        let run = self.run(TaskKind::Consumer, consumer, pool)?;
        finish(TaskKind::Consumer, run)
    }

    /// Forward pass of every member on `x`, quantified as one predictive
    /// distribution with one sample per member (ordered by model id).
    pub fn predict_quantified<Q: IntoQuantifier + ?Sized>(
        &self,
        x: ArrayView2<f64>,
        quantifier: &Q,
        pool: &PoolConfig,
        as_confidence: Option<bool>,
    ) -> Result<QuantifiedResult> {
        let q = quantifier.resolve()?;
        Ok(self.predict_quantified_many(x, &[q], pool, as_confidence)?.remove(0))
    }

    pub fn predict_quantified_many<Q: IntoQuantifier>(
        &self,
        x: ArrayView2<f64>,
        quantifiers: &[Q],
        pool: &PoolConfig,
        as_confidence: Option<bool>,
    ) -> Result<Vec<QuantifiedResult>> {
        let resolved = resolve_sampling(quantifiers)?;
        let consumer = TaskRef::new(FORWARD).with_params(&ForwardParams::from_array(x));
        self.quantify_predictions_many(&resolved, &consumer, pool, as_confidence)
    }

    /// Like [`predict_quantified`](Self::predict_quantified), but the member
    /// outputs come from `consumer`, which must return one 2-axis array of
    /// the same shape per member.
    pub fn quantify_predictions<Q: IntoQuantifier + ?Sized>(
        &self,
        quantifier: &Q,
        consumer: &TaskRef,
        pool: &PoolConfig,
        as_confidence: Option<bool>,
    ) -> Result<QuantifiedResult> {
        let q = quantifier.resolve()?;
        Ok(self
            .quantify_predictions_many(&[q], consumer, pool, as_confidence)?
            .remove(0))
    }

    pub fn quantify_predictions_many<Q: IntoQuantifier>(
        &self,
        quantifiers: &[Q],
        consumer: &TaskRef,
        pool: &PoolConfig,
        as_confidence: Option<bool>,
    ) -> Result<Vec<QuantifiedResult>> {
        let resolved = resolve_sampling(quantifiers)?;
        let run: TaskRun<Value> = self.consume(consumer, pool)?;
        let outputs = assemble(&run.results)?;
        quantify_outputs(&resolved, &outputs, as_confidence)
    }
}

fn finish<T: DeserializeOwned>(kind: TaskKind, run: PoolRun) -> Result<TaskRun<T>> {
    let failures: Vec<(usize, String)> = run
        .outcomes
        .iter()
        .filter_map(|(id, r)| r.as_ref().err().map(|e| (*id, e.clone())))
        .collect();
    if !failures.is_empty() {
        return Err(EnsembleError::TasksFailed { kind, failures });
    }
    let results = run
        .outcomes
        .into_iter()
        .map(|(id, r)| {
            serde_json::from_value(r.expect("failures handled")).map_err(|e| EnsembleError::ResultType {
                model_id: id,
                reason: e.to_string(),
            })
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(TaskRun {
        results,
        stats: run.stats,
    })
}

fn resolve_sampling<Q: IntoQuantifier>(quantifiers: &[Q]) -> Result<Vec<Quantifier>> {
    if quantifiers.is_empty() {
        return Err(EnsembleError::InvalidConfig("no quantifier requested".into()));
    }
    let resolved = quantifiers
        .iter()
        .map(|q| q.resolve())
        .collect::<quantifiers::Result<Vec<_>>>()?;
    if let Some(q) = resolved.iter().find(|q| !q.is_sampling_based()) {
        return Err(EnsembleError::PointPredictor(q.name()));
    }
    let problem = resolved[0].descriptor().problem_type;
    if let Some(q) = resolved.iter().find(|q| q.descriptor().problem_type != problem) {
        return Err(EnsembleError::InvalidConfig(format!(
            "cannot mix {:?} and {:?} quantifiers ('{}')",
            problem,
            q.descriptor().problem_type,
            q.name()
        )));
    }
    Ok(resolved)
}

/// Decodes per-member outputs and checks they all share member 0's shape.
pub(crate) fn assemble(results: &[Value]) -> Result<Vec<Array2<f64>>> {
    let mut outputs: Vec<Array2<f64>> = Vec::with_capacity(results.len());
    for (id, value) in results.iter().enumerate() {
        let m = value_to_matrix(value).map_err(|reason| EnsembleError::Assembly { model_id: id, reason })?;
        if let Some(first) = outputs.first() {
            if m.dim() != first.dim() {
                return Err(EnsembleError::Assembly {
                    model_id: id,
                    reason: format!("output shape {:?} differs from model 0's {:?}", m.dim(), first.dim()),
                });
            }
        }
        outputs.push(m);
    }
    Ok(outputs)
}

pub(crate) fn quantify_outputs(
    quantifiers: &[Quantifier],
    outputs: &[Array2<f64>],
    as_confidence: Option<bool>,
) -> Result<Vec<QuantifiedResult>> {
    let views: Vec<ArrayView2<f64>> = outputs.iter().map(|o| o.view()).collect();
    let mut classification = None;
    let mut regression = None;
    quantifiers
        .iter()
        .map(|&q| {
            let result = match q.descriptor().problem_type {
                ProblemType::Classification => {
                    if classification.is_none() {
                        classification = Some(SampledOutputs::stack(&views)?);
                    }
                    apply_sampled(q, classification.as_ref().expect("stacked"))?
                }
                ProblemType::Regression => {
                    if regression.is_none() {
                        regression = Some(RegressionSamples::stack(&views)?);
                    }
                    quantifiers::standard_deviation(regression.as_ref().expect("stacked"))?
                }
            };
            Ok(quantifiers::convert_score(result, as_confidence))
        })
        .collect()
}
