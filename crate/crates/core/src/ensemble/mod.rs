//! Lazily persisted Deep Ensembles.
//!
//! An ensemble is a directory:
//!
//! ```text
//! ensemble.json    {"version": 1, "num_models": n, "base_seed": s}
//! model_<i>.uwm    one file per member
//! .uwlock          present while an operation runs
//! ```
//!
//! Members are only ever loaded inside tasks, which run either in the calling
//! process (`num_processes = 0`) or in worker processes that re-execute the
//! current binary. See [`Registry`] for how tasks are made available to
//! workers.

pub mod builtin;
mod context;
mod layout;
mod lazy;
mod pool;
mod task;
mod worker;

pub use context::{ContextHandlerKind, DeviceSlot, PoolConfig};
pub use layout::{is_ensemble_dir, model_path, Manifest, LOCK_FILE, MANIFEST_FILE, MANIFEST_VERSION};
pub use lazy::{LazyEnsemble, TaskRun};
pub use pool::{run_pool, OccupancyEvent, PoolRun, PoolStats, Runtime};
pub use task::{Registry, TaskContext, TaskError, TaskKind, TaskRef, TaskResult};
pub use worker::{run_if_worker, Launcher, WORKER_TEST_ENTRY};

use std::path::PathBuf;

use thiserror::Error;

use crate::persist::PersistError;
use crate::quantifiers::QuantifierError;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("ensemble is busy: lock file {} exists", .0.display())]
    Locked(PathBuf),
    #[error("no task named '{name}' is registered; known tasks: {}", known.join(", "))]
    UnknownTask { name: String, known: Vec<String> },
    #[error("ensemble directory already holds {}", .0.display())]
    NotEmpty(PathBuf),
    #[error("model {model_id} is missing: {}", path.display())]
    MissingModel { model_id: usize, path: PathBuf },
    #[error("{kind} failed for model ids {:?}: {}", failures.iter().map(|f| f.0).collect::<Vec<_>>(),
        failures.iter().map(|(id, e)| format!("[{id}] {e}")).collect::<Vec<_>>().join("; "))]
    TasksFailed {
        kind: TaskKind,
        failures: Vec<(usize, String)>,
    },
    #[error("'{0}' is a point-predictor quantifier and needs a single model's outputs; \
             an ensemble only yields samples, so quantify on a single atomic model instead")]
    PointPredictor(&'static str),
    #[error("cannot assemble outputs of model {model_id}: {reason}")]
    Assembly { model_id: usize, reason: String },
    #[error("unexpected result from model {model_id}: {reason}")]
    ResultType { model_id: usize, reason: String },
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error(transparent)]
    Quantifier(#[from] QuantifierError),
}

impl EnsembleError {
    /// Model ids whose task failed, if this is a task failure.
    pub fn failed_ids(&self) -> Vec<usize> {
        match self {
            EnsembleError::TasksFailed { failures, .. } => failures.iter().map(|f| f.0).collect(),
            _ => Vec::new(),
        }
    }
}

pub type Result<T> = std::result::Result<T, EnsembleError>;
