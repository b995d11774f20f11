use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::layout;
use crate::nnengine::SequentialModel;
use crate::persist;

pub type TaskError = Box<dyn std::error::Error + Send + Sync>;
pub type TaskResult<T> = Result<T, TaskError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Builds a model from nothing but its id and seed.
    Supplier,
    /// Transforms a persisted model; the returned model replaces it.
    Mapper,
    /// Reads a persisted model without changing it.
    Consumer,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Supplier => "supplier",
            TaskKind::Mapper => "mapper",
            TaskKind::Consumer => "consumer",
        })
    }
}

/// What a task sees about the model it runs for.
#[derive(Debug, Clone)]
pub struct TaskContext<'a> {
    pub model_id: usize,
    /// Derived from the pool's base seed and `model_id`.
    pub seed: u64,
    pub params: &'a Value,
    /// Device slot of the executing worker; `None` in the calling process.
    pub device: Option<&'a str>,
    /// Incarnation number of the executing worker; `None` in the calling process.
    pub worker: Option<usize>,
}

impl TaskContext<'_> {
    /// Deserializes the task parameters.
    pub fn params<T: DeserializeOwned>(&self) -> TaskResult<T> {
        Ok(T::deserialize(self.params)?)
    }
}

type SupplierFn = dyn Fn(&TaskContext) -> TaskResult<(SequentialModel, Value)> + Send + Sync;
type MapperFn = dyn Fn(&TaskContext, SequentialModel) -> TaskResult<(SequentialModel, Value)> + Send + Sync;
type ConsumerFn = dyn Fn(&TaskContext, &SequentialModel) -> TaskResult<Value> + Send + Sync;

#[derive(Clone)]
pub(crate) enum TaskFn {
    Supplier(Arc<SupplierFn>),
    Mapper(Arc<MapperFn>),
    Consumer(Arc<ConsumerFn>),
}

impl TaskFn {
    fn kind(&self) -> TaskKind {
        match self {
            TaskFn::Supplier(_) => TaskKind::Supplier,
            TaskFn::Mapper(_) => TaskKind::Mapper,
            TaskFn::Consumer(_) => TaskKind::Consumer,
        }
    }
}

/// Named task functions.
///
/// Workers are fresh processes, so a task cannot be shipped to them as a
/// closure. Instead every process builds the same registry and tasks are
/// referred to by name. A program that runs pools with workers must call
/// [`run_if_worker`](super::run_if_worker) with its registry at the top of
/// `main` (test binaries use [`worker_test_entry!`](crate::worker_test_entry)).
#[derive(Clone, Default)]
pub struct Registry {
    tasks: BTreeMap<String, TaskFn>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map()
            .entries(self.tasks.iter().map(|(k, v)| (k, v.kind())))
            .finish()
    }
}

fn into_value<T: Serialize>(value: T) -> TaskResult<Value> {
    Ok(serde_json::to_value(value)?)
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// A registry holding the built-in tasks (see [`builtin`](super::builtin)).
    pub fn with_builtins() -> Self {
        let mut r = Self::new();
        super::builtin::register(&mut r);
        r
    }

    pub fn supplier<R, F>(&mut self, name: &str, f: F) -> &mut Self
    where
        R: Serialize,
        F: Fn(&TaskContext) -> TaskResult<(SequentialModel, R)> + Send + Sync + 'static,
    {
        let f = move |ctx: &TaskContext| {
            let (m, r) = f(ctx)?;
            Ok((m, into_value(r)?))
        };
        self.tasks.insert(name.to_string(), TaskFn::Supplier(Arc::new(f)));
        self
    }

    pub fn mapper<R, F>(&mut self, name: &str, f: F) -> &mut Self
    where
        R: Serialize,
        F: Fn(&TaskContext, SequentialModel) -> TaskResult<(SequentialModel, R)> + Send + Sync + 'static,
    {
        let f = move |ctx: &TaskContext, m: SequentialModel| {
            let (m, r) = f(ctx, m)?;
            Ok((m, into_value(r)?))
        };
        self.tasks.insert(name.to_string(), TaskFn::Mapper(Arc::new(f)));
        self
    }

    pub fn consumer<R, F>(&mut self, name: &str, f: F) -> &mut Self
    where
        R: Serialize,
        F: Fn(&TaskContext, &SequentialModel) -> TaskResult<R> + Send + Sync + 'static,
    {
        let f = move |ctx: &TaskContext, m: &SequentialModel| into_value(f(ctx, m)?);
        self.tasks.insert(name.to_string(), TaskFn::Consumer(Arc::new(f)));
        self
    }

    pub fn kind_of(&self, name: &str) -> Option<TaskKind> {
        self.tasks.get(name).map(TaskFn::kind)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tasks.keys().map(String::as_str)
    }

    pub(crate) fn get(&self, name: &str) -> Option<&TaskFn> {
        self.tasks.get(name)
    }
}

/// A registered task plus its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRef {
    pub name: String,
    pub params: Value,
}

impl TaskRef {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            params: Value::Null,
        }
    }

    pub fn with_params<P: Serialize>(mut self, params: &P) -> Self {
        self.params = serde_json::to_value(params).expect("task parameters must serialize to JSON");
        self
    }
}

/// Everything a process needs to run one pool's tasks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct Job {
    pub dir: std::path::PathBuf,
    pub kind: TaskKind,
    pub task: TaskRef,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub(crate) enum ModelEvent {
    Loaded,
    Unloaded,
}

pub(crate) struct Placement<'a> {
    pub device: Option<&'a str>,
    pub worker: Option<usize>,
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "task panicked".to_string()
    }
}

fn guarded<T>(f: impl FnOnce() -> TaskResult<T>) -> Result<T, String> {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(e.to_string()),
        Err(payload) => Err(format!("task panicked: {}", panic_message(payload.as_ref()))),
    }
}

fn load(dir: &Path, model_id: usize, events: &mut dyn FnMut(ModelEvent)) -> Result<SequentialModel, String> {
    let path = layout::model_path(dir, model_id);
    let model = persist::load_model(&path).map_err(|e| e.to_string())?;
    events(ModelEvent::Loaded);
    Ok(model)
}

fn stage(dir: &Path, model_id: usize, model: &SequentialModel) -> Result<(), String> {
    persist::save_model_atomic(model, &layout::staged_path(dir, model_id)).map_err(|e| e.to_string())
}

/// Runs one task for one model. Shared by workers and the in-process path.
///
/// Suppliers and mappers write the resulting model to the staged path; the
/// coordinator commits it once the whole pool has finished. `events` reports
/// when a model enters and leaves memory.
pub(crate) fn execute(
    registry: &Registry,
    job: &Job,
    model_id: usize,
    seed: u64,
    placement: &Placement,
    events: &mut dyn FnMut(ModelEvent),
) -> Result<Value, String> {
    let task = registry
        .get(&job.task.name)
        .ok_or_else(|| format!("no task named '{}' is registered", job.task.name))?;
    if task.kind() != job.kind {
        return Err(format!(
            "task '{}' is a {}, not a {}",
            job.task.name,
            task.kind(),
            job.kind
        ));
    }
    let ctx = TaskContext {
        model_id,
        seed,
        params: &job.task.params,
        device: placement.device,
        worker: placement.worker,
    };
    match task {
        TaskFn::Supplier(f) => {
            events(ModelEvent::Loaded);
            let out = guarded(|| f(&ctx)).and_then(|(model, value)| {
                stage(&job.dir, model_id, &model)?;
                Ok(value)
            });
            events(ModelEvent::Unloaded);
            out
        }
        TaskFn::Mapper(f) => {
            let model = load(&job.dir, model_id, events)?;
            let out = guarded(|| f(&ctx, model)).and_then(|(model, value)| {
                stage(&job.dir, model_id, &model)?;
                Ok(value)
            });
            events(ModelEvent::Unloaded);
            out
        }
        TaskFn::Consumer(f) => {
            let model = load(&job.dir, model_id, events)?;
            let out = guarded(|| f(&ctx, &model));
            drop(model);
            events(ModelEvent::Unloaded);
            out
        }
    }
}

/// Decodes an output matrix returned as nested JSON arrays.
pub(crate) fn value_to_matrix(value: &Value) -> Result<Array2<f64>, String> {
    let rows: Vec<Vec<f64>> =
        Vec::deserialize(value).map_err(|e| format!("expected a 2-axis numeric array: {e}"))?;
    let width = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != width) {
        return Err(format!("row {i} has {} values, expected {width}", rows[i].len()));
    }
    Array2::from_shape_vec((rows.len(), width), rows.into_iter().flatten().collect())
        .map_err(|e| e.to_string())
}

pub(crate) fn remove_if_exists(path: &Path) -> std::io::Result<()> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e),
        _ => Ok(()),
    }
}
