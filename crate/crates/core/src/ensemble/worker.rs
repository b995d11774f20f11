use std::env;
use std::ffi::OsString;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{self, Child, ChildStdin, ChildStdout, Command, Stdio};

use log::debug;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::task::{execute, Job, ModelEvent, Placement, Registry};

pub(crate) const JOB_ENV: &str = "UQWIZ_WORKER_JOB";
pub(crate) const DEVICE_ENV: &str = "UQWIZ_WORKER_DEVICE";
pub(crate) const INCARNATION_ENV: &str = "UQWIZ_WORKER_INCARNATION";
pub(crate) const MEMORY_HINT_ENV: &str = "UQWIZ_MEMORY_HINT";

const RESULT_PREFIX: &str = "UQWIZ-RESULT ";
const EVENT_PREFIX: &str = "UQWIZ-EVENT ";

/// Name of the test function generated by [`worker_test_entry!`](crate::worker_test_entry).
pub const WORKER_TEST_ENTRY: &str = "__uqwiz_worker_entry";

#[derive(Debug, Serialize, Deserialize)]
struct Request {
    model_id: usize,
    seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Outcome {
    Ok(Value),
    Err(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct Reply {
    model_id: usize,
    outcome: Outcome,
}

#[derive(Debug, Serialize, Deserialize)]
struct EventLine {
    model_id: usize,
    event: ModelEvent,
}

/// Turns the current process into a pool worker if it was started as one.
///
/// Call this first thing in `main` of any program that runs worker pools.
/// In a normal start it returns immediately without calling `registry`. In a
/// worker it serves tasks until the coordinator closes the pipe and then
/// exits the process.
pub fn run_if_worker<F: FnOnce() -> Registry>(registry: F) {
    let Some(job_path) = env::var_os(JOB_ENV) else {
        return;
    };
    let code = match serve(Path::new(&job_path), &registry()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("uqwiz worker {}: {e}", process::id());
            3
        }
    };
    process::exit(code);
}

// A test harness may print its own text ahead of the first protocol line.
fn after_marker<'a>(line: &'a str, marker: &str) -> Option<&'a str> {
    line.find(marker).map(|i| &line[i + marker.len()..])
}

fn serve(job_path: &Path, registry: &Registry) -> io::Result<()> {
    let job: Job = serde_json::from_slice(&fs::read(job_path)?).map_err(io::Error::other)?;
    let device = env::var(DEVICE_ENV).ok();
    let worker = env::var(INCARNATION_ENV).ok().and_then(|s| s.parse().ok());
    let placement = Placement {
        device: device.as_deref(),
        worker,
    };
    let stdin = io::stdin();
    let stdout = io::stdout();
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let req: Request = serde_json::from_str(&line).map_err(io::Error::other)?;
        let mut emit = |event: ModelEvent| {
            let line = serde_json::to_string(&EventLine {
                model_id: req.model_id,
                event,
            })
            .expect("event serializes");
            let mut out = stdout.lock();
            let _ = writeln!(out, "{EVENT_PREFIX}{line}");
            let _ = out.flush();
        };
        let outcome = match execute(registry, &job, req.model_id, req.seed, &placement, &mut emit) {
            Ok(v) => Outcome::Ok(v),
            Err(e) => Outcome::Err(e),
        };
        let reply = serde_json::to_string(&Reply {
            model_id: req.model_id,
            outcome,
        })
        .map_err(io::Error::other)?;
        let mut out = stdout.lock();
        writeln!(out, "{RESULT_PREFIX}{reply}")?;
        out.flush()?;
    }
    Ok(())
}

/// Generates the `#[test]` hook that lets an integration-test binary act as
/// its own worker. Invoke it once at the crate root of the test file and
/// run pools with [`Launcher::test_harness`].
#[macro_export]
macro_rules! worker_test_entry {
    ($registry:expr) => {
        #[test]
        fn __uqwiz_worker_entry() {
            $crate::ensemble::run_if_worker(|| $registry);
        }
    };
}

/// How worker processes are started.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Launcher {
    program: PathBuf,
    args: Vec<OsString>,
}

impl Default for Launcher {
    fn default() -> Self {
        Self::current_exe()
    }
}

impl Launcher {
    pub fn new(program: impl Into<PathBuf>, args: Vec<OsString>) -> Self {
        Self {
            program: program.into(),
            args,
        }
    }

    /// Re-executes the running binary, which must call [`run_if_worker`].
    pub fn current_exe() -> Self {
        let program = env::current_exe()
            .ok()
            .or_else(|| env::args_os().next().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("uqwiz"));
        Self::new(program, Vec::new())
    }

    /// Re-executes the running test binary, selecting only the hook made by
    /// [`worker_test_entry!`](crate::worker_test_entry).
    pub fn test_harness() -> Self {
        let args = [WORKER_TEST_ENTRY, "--exact", "--nocapture", "--test-threads=1"]
            .into_iter()
            .map(OsString::from)
            .collect();
        Self {
            args,
            ..Self::current_exe()
        }
    }

    pub fn program(&self) -> &Path {
        &self.program
    }
}

/// Coordinator-side handle to one worker process.
pub(crate) struct WorkerProcess {
    child: Child,
    stdin: Option<ChildStdin>,
    stdout: BufReader<ChildStdout>,
    /// Models the worker reported as loaded but not yet released.
    pub resident: usize,
}

pub(crate) struct WorkerSpec<'a> {
    pub job_path: &'a Path,
    pub device: &'a str,
    pub memory_hint: Option<u64>,
    pub incarnation: usize,
}

impl WorkerProcess {
    pub fn spawn(launcher: &Launcher, spec: &WorkerSpec) -> io::Result<Self> {
        let mut cmd = Command::new(&launcher.program);
        cmd.args(&launcher.args)
            .env(JOB_ENV, spec.job_path)
            .env(DEVICE_ENV, spec.device)
            .env(INCARNATION_ENV, spec.incarnation.to_string())
            .env_remove(MEMORY_HINT_ENV)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit());
        if let Some(hint) = spec.memory_hint {
            cmd.env(MEMORY_HINT_ENV, hint.to_string());
        }
        let mut child = cmd.spawn()?;
        let stdin = child.stdin.take();
        let stdout = BufReader::new(child.stdout.take().expect("stdout is piped"));
        debug!(
            "spawned worker {} (pid {}) on slot {}",
            spec.incarnation,
            child.id(),
            spec.device
        );
        Ok(Self {
            child,
            stdin,
            stdout,
            resident: 0,
        })
    }

    pub fn pid(&self) -> u32 {
        self.child.id()
    }

    /// Sends one task and waits for its reply. `Err` means the worker died
    /// or broke protocol; the inner `Result` is the task's own outcome.
    pub fn run(
        &mut self,
        model_id: usize,
        seed: u64,
        on_event: &mut dyn FnMut(ModelEvent),
    ) -> io::Result<Result<Value, String>> {
        let line = serde_json::to_string(&Request { model_id, seed }).expect("request serializes");
        let stdin = self.stdin.as_mut().ok_or_else(|| io::Error::other("worker input closed"))?;
        writeln!(stdin, "{line}")?;
        stdin.flush()?;
        let mut buf = String::new();
        loop {
            buf.clear();
            if self.stdout.read_line(&mut buf)? == 0 {
                return Err(io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    "worker exited before replying",
                ));
            }
            let text = buf.trim_end();
            if let Some(json) = after_marker(text, EVENT_PREFIX) {
                let ev: EventLine = serde_json::from_str(json).map_err(io::Error::other)?;
                match ev.event {
                    ModelEvent::Loaded => self.resident += 1,
                    ModelEvent::Unloaded => self.resident = self.resident.saturating_sub(1),
                }
                on_event(ev.event);
            } else if let Some(json) = after_marker(text, RESULT_PREFIX) {
                let reply: Reply = serde_json::from_str(json).map_err(io::Error::other)?;
                if reply.model_id != model_id {
                    return Err(io::Error::other(format!(
                        "worker answered for model {} while running model {model_id}",
                        reply.model_id
                    )));
                }
                return Ok(match reply.outcome {
                    Outcome::Ok(v) => Ok(v),
                    Outcome::Err(e) => Err(e),
                });
            }
        }
    }

    /// Closes the task pipe and reaps the process. A worker that already
    /// failed is killed instead of waited on.
    pub fn finish(mut self, failed: bool) {
        drop(self.stdin.take());
        if failed {
            let _ = self.child.kill();
        }
        match self.child.wait() {
            Ok(status) if !status.success() && !failed => {
                debug!("worker {} exited with {status}", self.child.id())
            }
            _ => {}
        }
    }
}
