use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use super::EnsembleError;

/// One device slot of a [`ContextHandlerKind::DeviceAllocator`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceSlot {
    pub device_id: String,
    /// Maximum number of workers attached to this slot at once.
    pub capacity: usize,
    /// Carried to the worker as `UQWIZ_MEMORY_HINT`; not enforced.
    pub memory_hint: Option<u64>,
}

impl DeviceSlot {
    pub fn new(device_id: impl Into<String>, capacity: usize) -> Self {
        Self {
            device_id: device_id.into(),
            capacity,
            memory_hint: None,
        }
    }
}

/// How worker processes are set up.
///
/// * `None` runs every task in the calling process (`num_processes = 0` only).
/// * `DynamicGrowth` lets all workers share one unlimited slot.
/// * `DeviceAllocator` attaches each worker to a declared slot, never
///   exceeding a slot's capacity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ContextHandlerKind {
    None,
    #[default]
    DynamicGrowth,
    DeviceAllocator(Vec<DeviceSlot>),
}

pub(crate) const SHARED_SLOT: &str = "shared";

impl ContextHandlerKind {
    pub fn name(&self) -> &'static str {
        match self {
            ContextHandlerKind::None => "none",
            ContextHandlerKind::DynamicGrowth => "dynamic_growth",
            ContextHandlerKind::DeviceAllocator(_) => "device_allocator",
        }
    }

    pub fn validate(&self, num_processes: usize) -> Result<(), EnsembleError> {
        match self {
            ContextHandlerKind::None if num_processes > 0 => Err(EnsembleError::InvalidConfig(format!(
                "the none context runs in the main process and needs num_processes = 0, got {num_processes}"
            ))),
            ContextHandlerKind::DeviceAllocator(slots) => {
                if let Some(s) = slots.iter().find(|s| s.capacity == 0) {
                    return Err(EnsembleError::InvalidConfig(format!(
                        "device slot '{}' has zero capacity",
                        s.device_id
                    )));
                }
                let total: usize = slots.iter().map(|s| s.capacity).sum();
                if total < num_processes {
                    return Err(EnsembleError::InvalidConfig(format!(
                        "device slots hold {total} workers but {num_processes} processes were requested"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Slots a pool of `num_processes` workers draws from.
    pub(crate) fn slots(&self, num_processes: usize) -> Vec<DeviceSlot> {
        match self {
            ContextHandlerKind::None => Vec::new(),
            ContextHandlerKind::DynamicGrowth => vec![DeviceSlot::new(SHARED_SLOT, num_processes.max(1))],
            ContextHandlerKind::DeviceAllocator(slots) => slots.clone(),
        }
    }
}

impl fmt::Display for ContextHandlerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContextHandlerKind::DeviceAllocator(slots) => {
                let parts: Vec<String> = slots
                    .iter()
                    .map(|s| format!("{}={}", s.device_id, s.capacity))
                    .collect();
                write!(f, "device_allocator:{}", parts.join(","))
            }
            other => f.write_str(other.name()),
        }
    }
}

/// Parses `none`, `dynamic_growth` or `device_allocator:<id>=<capacity>,...`.
impl FromStr for ContextHandlerKind {
    type Err = EnsembleError;

    fn from_str(s: &str) -> Result<Self, EnsembleError> {
        let bad = || {
            EnsembleError::InvalidConfig(format!(
                "unknown context '{s}'; expected none, dynamic_growth or device_allocator:<id>=<capacity>,..."
            ))
        };
        match s.trim() {
            "none" => Ok(ContextHandlerKind::None),
            "dynamic_growth" => Ok(ContextHandlerKind::DynamicGrowth),
            other => {
                let spec = other.strip_prefix("device_allocator:").ok_or_else(bad)?;
                let slots = spec
                    .split(',')
                    .map(|part| {
                        let (id, cap) = part.split_once('=').ok_or_else(bad)?;
                        let capacity = cap.trim().parse().map_err(|_| bad())?;
                        Ok(DeviceSlot::new(id.trim(), capacity))
                    })
                    .collect::<Result<Vec<_>, EnsembleError>>()?;
                if slots.is_empty() {
                    return Err(bad());
                }
                Ok(ContextHandlerKind::DeviceAllocator(slots))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolConfig {
    /// Worker processes; 0 runs everything in the calling process.
    pub num_processes: usize,
    /// Tasks a worker handles before it is discarded and replaced.
    pub models_per_process_before_respawn: usize,
    /// Per-model task seeds are derived from this.
    pub base_seed: u64,
    /// Overrides the ensemble's default context handler.
    pub context: Option<ContextHandlerKind>,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            num_processes: 0,
            models_per_process_before_respawn: 1,
            base_seed: 0,
            context: None,
        }
    }
}

impl PoolConfig {
    pub fn new(num_processes: usize) -> Self {
        Self {
            num_processes,
            ..Default::default()
        }
    }

    pub fn with_seed(mut self, base_seed: u64) -> Self {
        self.base_seed = base_seed;
        self
    }

    pub fn with_respawn_after(mut self, tasks: usize) -> Self {
        self.models_per_process_before_respawn = tasks;
        self
    }

    pub fn with_context(mut self, context: ContextHandlerKind) -> Self {
        self.context = Some(context);
        self
    }

    pub(crate) fn validate(&self, num_tasks: usize) -> Result<(), EnsembleError> {
        if self.models_per_process_before_respawn == 0 {
            return Err(EnsembleError::InvalidConfig(
                "models_per_process_before_respawn must be at least 1".into(),
            ));
        }
        if self.num_processes > num_tasks && num_tasks > 0 {
            warn!(
                "{} processes requested for {num_tasks} models; extra workers stay idle",
                self.num_processes
            );
        }
        Ok(())
    }
}
