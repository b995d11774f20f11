use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EnsembleError;
use crate::persist::PersistError;

pub const MANIFEST_FILE: &str = "ensemble.json";
pub const LOCK_FILE: &str = ".uwlock";
pub const MANIFEST_VERSION: u32 = 1;

pub fn model_path(dir: &Path, model_id: usize) -> PathBuf {
    dir.join(format!("model_{model_id}.uwm"))
}

pub(crate) fn staged_path(dir: &Path, model_id: usize) -> PathBuf {
    dir.join(format!("model_{model_id}.uwm.staged"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub num_models: usize,
    pub base_seed: u64,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self, EnsembleError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| PersistError::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| EnsembleError::InvalidConfig(format!("{}: {e}", path.display())))?;
        if m.version != MANIFEST_VERSION {
            return Err(EnsembleError::InvalidConfig(format!(
                "{}: unsupported manifest version {}",
                path.display(),
                m.version
            )));
        }
        Ok(m)
    }

    pub(crate) fn write(&self, dir: &Path) -> Result<(), EnsembleError> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| PersistError::io(&path, e).into())
    }
}

pub fn is_ensemble_dir(dir: &Path) -> bool {
    dir.join(MANIFEST_FILE).is_file()
}

/// Held for the duration of one pool run; removes the lock file on drop.
#[derive(Debug)]
pub(crate) struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self, EnsembleError> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(EnsembleError::Locked(path)),
            Err(e) => Err(PersistError::io(&path, e).into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
