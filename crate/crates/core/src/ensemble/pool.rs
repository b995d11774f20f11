use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;

use log::{info, warn};
use serde::Serialize;
use serde_json::Value;

use super::context::{ContextHandlerKind, DeviceSlot, PoolConfig};
use super::task::{execute, Job, ModelEvent, Placement, Registry, TaskKind, TaskRef};
use super::worker::{Launcher, WorkerProcess, WorkerSpec};
use super::EnsembleError;
use crate::persist::PersistError;
use crate::rng::derive_seed;

/// The registry tasks are resolved against and how workers are started.
#[derive(Debug, Clone)]
pub struct Runtime {
    registry: Arc<Registry>,
    launcher: Launcher,
}

impl Default for Runtime {
    fn default() -> Self {
        Self::new(Registry::with_builtins(), Launcher::current_exe())
    }
}

impl Runtime {
    pub fn new(registry: Registry, launcher: Launcher) -> Self {
        Self {
            registry: Arc::new(registry),
            launcher,
        }
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn launcher(&self) -> &Launcher {
        &self.launcher
    }
}

/// One change in a slot's worker count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OccupancyEvent {
    pub device_id: String,
    /// Workers attached to the slot right after the change.
    pub occupancy: usize,
}

/// Instrumentation collected during a pool run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct PoolStats {
    /// Worker processes started, including replacements.
    pub worker_incarnations: usize,
    /// Process ids of the workers, in start order.
    pub worker_pids: Vec<u32>,
    /// Tasks re-run because their worker died.
    pub retries: usize,
    /// Largest number of atomic models held in memory at once, over all processes.
    pub peak_models_in_memory: usize,
    pub peak_slot_occupancy: BTreeMap<String, usize>,
    pub occupancy_log: Vec<OccupancyEvent>,
}

/// Per-model outcomes in the order of the requested ids, plus statistics.
#[derive(Debug, Clone)]
pub struct PoolRun {
    pub outcomes: Vec<(usize, Result<Value, String>)>,
    pub stats: PoolStats,
}

impl PoolRun {
    pub fn failed_ids(&self) -> Vec<usize> {
        self.outcomes
            .iter()
            .filter(|(_, r)| r.is_err())
            .map(|(id, _)| *id)
            .collect()
    }
}

#[derive(Default)]
struct Memory {
    current: usize,
    peak: usize,
}

impl Memory {
    fn apply(&mut self, event: ModelEvent) {
        match event {
            ModelEvent::Loaded => {
                self.current += 1;
                self.peak = self.peak.max(self.current);
            }
            ModelEvent::Unloaded => self.current = self.current.saturating_sub(1),
        }
    }
}

struct SlotState {
    slots: Vec<(DeviceSlot, usize)>,
    peaks: BTreeMap<String, usize>,
    log: Vec<OccupancyEvent>,
}

struct SlotBoard {
    state: Mutex<SlotState>,
    freed: Condvar,
}

impl SlotBoard {
    fn new(slots: Vec<DeviceSlot>) -> Self {
        let peaks = slots.iter().map(|s| (s.device_id.clone(), 0)).collect();
        Self {
            state: Mutex::new(SlotState {
                slots: slots.into_iter().map(|s| (s, 0)).collect(),
                peaks,
                log: Vec::new(),
            }),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> (usize, DeviceSlot) {
        let mut st = self.state.lock().unwrap();
        loop {
            if let Some(i) = st.slots.iter().position(|(s, used)| *used < s.capacity) {
                st.slots[i].1 += 1;
                let (slot, used) = st.slots[i].clone();
                let peak = st.peaks.entry(slot.device_id.clone()).or_default();
                *peak = (*peak).max(used);
                st.log.push(OccupancyEvent {
                    device_id: slot.device_id.clone(),
                    occupancy: used,
                });
                return (i, slot);
            }
            st = self.freed.wait(st).unwrap();
        }
    }

    fn release(&self, index: usize) {
        let mut st = self.state.lock().unwrap();
        st.slots[index].1 -= 1;
        let event = OccupancyEvent {
            device_id: st.slots[index].0.device_id.clone(),
            occupancy: st.slots[index].1,
        };
        st.log.push(event);
        drop(st);
        self.freed.notify_one();
    }
}

struct Shared {
    queue: Mutex<VecDeque<(usize, u32)>>,
    outcomes: Mutex<BTreeMap<usize, Result<Value, String>>>,
    memory: Mutex<Memory>,
    slots: SlotBoard,
    pids: Mutex<Vec<u32>>,
    incarnations: AtomicUsize,
    retries: AtomicUsize,
}

impl Shared {
    fn pop(&self) -> Option<(usize, u32)> {
        self.queue.lock().unwrap().pop_front()
    }

    fn record(&self, id: usize, outcome: Result<Value, String>) {
        self.outcomes.lock().unwrap().insert(id, outcome);
    }

    fn model_event(&self, event: ModelEvent) {
        self.memory.lock().unwrap().apply(event);
    }
}

static JOB_COUNTER: AtomicUsize = AtomicUsize::new(0);

struct JobFile(PathBuf);

impl JobFile {
    fn write(dir: &Path, job: &Job) -> Result<Self, EnsembleError> {
        let n = JOB_COUNTER.fetch_add(1, Ordering::Relaxed);
        let path = dir.join(format!(".uwjob-{}-{n}.json", std::process::id()));
        let text = serde_json::to_vec(job).expect("job serializes");
        fs::write(&path, text).map_err(|e| PersistError::io(&path, e))?;
        Ok(Self(path))
    }
}

impl Drop for JobFile {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Runs `task` once per id in `ids` and returns the outcomes in the same order.
///
/// With `num_processes = 0` the tasks run one after another in the calling
/// process. Otherwise `num_processes` workers run them, each attached to a
/// slot of `context` and replaced after `models_per_process_before_respawn`
/// tasks. A task whose worker dies is retried once on a fresh worker; a task
/// that returns an error is not retried.
///
/// Suppliers and mappers leave their models staged next to the model files;
/// committing them is up to the caller.
pub fn run_pool(
    runtime: &Runtime,
    dir: &Path,
    kind: TaskKind,
    task: &TaskRef,
    ids: &[usize],
    pool: &PoolConfig,
    context: &ContextHandlerKind,
) -> Result<PoolRun, EnsembleError> {
    pool.validate(ids.len())?;
    context.validate(pool.num_processes)?;
    match runtime.registry.kind_of(&task.name) {
        None => {
            return Err(EnsembleError::UnknownTask {
                name: task.name.clone(),
                known: runtime.registry.names().map(String::from).collect(),
            })
        }
        Some(k) if k != kind => {
            return Err(EnsembleError::InvalidConfig(format!(
                "task '{}' is a {k}, not a {kind}",
                task.name
            )))
        }
        Some(_) => {}
    }
    let job = Job {
        dir: dir.to_path_buf(),
        kind,
        task: task.clone(),
    };
    if pool.num_processes == 0 {
        return Ok(run_in_process(runtime, &job, ids, pool));
    }

    let job_file = JobFile::write(dir, &job)?;
    let shared = Shared {
        queue: Mutex::new(ids.iter().map(|&id| (id, 0)).collect()),
        outcomes: Mutex::new(BTreeMap::new()),
        memory: Mutex::new(Memory::default()),
        slots: SlotBoard::new(context.slots(pool.num_processes)),
        pids: Mutex::new(Vec::new()),
        incarnations: AtomicUsize::new(0),
        retries: AtomicUsize::new(0),
    };
    info!(
        "running {kind} '{}' on {} models with {} workers ({context})",
        task.name,
        ids.len(),
        pool.num_processes
    );
    thread::scope(|scope| {
        for _ in 0..pool.num_processes.min(ids.len().max(1)) {
            scope.spawn(|| lane(&shared, runtime, &job_file.0, pool));
        }
    });

    let mut outcomes = shared.outcomes.into_inner().unwrap();
    let slots = shared.slots.state.into_inner().unwrap();
    let stats = PoolStats {
        worker_incarnations: shared.incarnations.into_inner(),
        worker_pids: shared.pids.into_inner().unwrap(),
        retries: shared.retries.into_inner(),
        peak_models_in_memory: shared.memory.into_inner().unwrap().peak,
        peak_slot_occupancy: slots.peaks,
        occupancy_log: slots.log,
    };
    let outcomes = ids
        .iter()
        .map(|&id| {
            let r = outcomes
                .remove(&id)
                .unwrap_or_else(|| Err("task was never executed".to_string()));
            (id, r)
        })
        .collect();
    Ok(PoolRun { outcomes, stats })
}

fn run_in_process(runtime: &Runtime, job: &Job, ids: &[usize], pool: &PoolConfig) -> PoolRun {
    let mut memory = Memory::default();
    let placement = Placement {
        device: None,
        worker: None,
    };
    let outcomes = ids
        .iter()
        .map(|&id| {
            let seed = derive_seed(pool.base_seed, id as u64);
            let r = execute(&runtime.registry, job, id, seed, &placement, &mut |e| memory.apply(e));
            (id, r)
        })
        .collect();
    PoolRun {
        outcomes,
        stats: PoolStats {
            peak_models_in_memory: memory.peak,
            ..Default::default()
        },
    }
}

fn lane(shared: &Shared, runtime: &Runtime, job_path: &Path, pool: &PoolConfig) {
    while let Some(first) = shared.pop() {
        let (slot_index, slot) = shared.slots.acquire();
        let incarnation = shared.incarnations.fetch_add(1, Ordering::SeqCst);
        let spec = WorkerSpec {
            job_path,
            device: &slot.device_id,
            memory_hint: slot.memory_hint,
            incarnation,
        };
        let mut worker = match WorkerProcess::spawn(&runtime.launcher, &spec) {
            Ok(w) => w,
            Err(e) => {
                shared.record(first.0, Err(format!("cannot start worker: {e}")));
                shared.slots.release(slot_index);
                continue;
            }
        };
        shared.pids.lock().unwrap().push(worker.pid());

        let mut next = Some(first);
        let mut handled = 0;
        let mut crashed = false;
        while let Some((id, attempt)) = next.take() {
            let seed = derive_seed(pool.base_seed, id as u64);
            match worker.run(id, seed, &mut |e| shared.model_event(e)) {
                Ok(outcome) => {
                    shared.record(id, outcome);
                    handled += 1;
                }
                Err(e) => {
                    crashed = true;
                    for _ in 0..worker.resident {
                        shared.model_event(ModelEvent::Unloaded);
                    }
                    if attempt == 0 {
                        warn!("worker {} died running model {id} ({e}); retrying", worker.pid());
                        shared.retries.fetch_add(1, Ordering::SeqCst);
                        shared.queue.lock().unwrap().push_front((id, attempt + 1));
                    } else {
                        shared.record(id, Err(format!("worker died twice: {e}")));
                    }
                    break;
                }
            }
            if handled < pool.models_per_process_before_respawn {
                next = shared.pop();
            }
        }
        worker.finish(crashed);
        shared.slots.release(slot_index);
    }
}
