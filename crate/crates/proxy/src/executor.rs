//! Task subprocess supervision.
//!
//! Every task runs as its own process in a fresh process group, inside an
//! ephemeral working directory namespaced by activation id. The child reads
//! one JSON document from fd 3 and writes one JSON document to fd 4. Stopping
//! a task signals the whole group: SIGTERM, a grace period, then SIGKILL.
//!
//! Anything other than a clean exit with a well-formed document is a crash,
//! and a crash is a null output.

use std::io::{self, Read, Write};
use std::os::fd::{AsRawFd, FromRawFd, OwnedFd, RawFd};
use std::os::unix::process::ExitStatusExt;
use std::path::{Component, Path, PathBuf};
use std::process::{ExitStatus, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;
use tokio::process::{Child, Command};
use tokio::task::JoinHandle;

pub const INPUT_FD: RawFd = 3;
pub const OUTPUT_FD: RawFd = 4;

#[derive(Debug, Clone)]
pub struct ExecutorConfig {
    pub term_to_kill_delay: Duration,
    /// Added to the child's nice value. Best effort.
    pub niceness: Option<i32>,
    pub workdir_root: PathBuf,
    /// A task still running after this long is killed and counts as crashed.
    pub task_timeout: Duration,
}

impl ExecutorConfig {
    pub fn new(workdir_root: impl Into<PathBuf>) -> Self {
        Self {
            term_to_kill_delay: Duration::from_secs(2),
            niceness: None,
            workdir_root: workdir_root.into(),
            task_timeout: Duration::from_secs(300),
        }
    }

    pub fn validate(&self) -> Result<(), ExecutorError> {
        if self.term_to_kill_delay.is_zero() {
            return Err(ExecutorError::InvalidDelay);
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExecutorError {
    #[error("entrypoint {0} does not exist")]
    MissingEntrypoint(PathBuf),
    #[error("failed to spawn {path}: {source}")]
    SpawnFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("failed to prepare working directory {path}: {source}")]
    Workdir {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("process already exited")]
    AlreadyExited,
    #[error("could not remove {path}: {source}")]
    CleanupFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("term-to-kill delay must be positive")]
    InvalidDelay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcessState {
    Spawned,
    /// Exited on its own with this code.
    Exited(i32),
    /// Died on its own from this signal.
    Crashed(i32),
    /// Stopped by our SIGTERM within the grace period.
    Signaled,
    /// Needed SIGKILL after the grace period.
    Killed,
    /// Killed by the watchdog.
    TimedOut,
}

impl ProcessState {
    pub fn is_terminal(self) -> bool {
        self != ProcessState::Spawned
    }
}

/// What to run for one task.
#[derive(Debug, Clone)]
pub struct Launch<'a> {
    pub activation_id: &'a str,
    pub task: &'a str,
    pub entrypoint: PathBuf,
    /// Runs `interpreter entrypoint` when set, the entrypoint itself otherwise.
    pub interpreter: Option<&'a str>,
}

#[derive(Debug)]
pub struct TaskProcess {
    task: String,
    pgid: i32,
    workdir: PathBuf,
    started_at: Instant,
    state: ProcessState,
    task_timeout: Duration,
    child: Child,
    output: Option<JoinHandle<io::Result<Vec<u8>>>>,
}

/// Directory for one task of one activation. Path separators and dots in the
/// task name cannot escape it.
pub fn task_workdir(root: &Path, activation_id: &str, task: &str) -> PathBuf {
    let clean = |s: &str| -> String {
        s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
    };
    root.join(clean(activation_id)).join(clean(task))
}

fn pipe() -> io::Result<(OwnedFd, OwnedFd)> {
    let mut fds = [0; 2];
    // SAFETY: fds is a valid two-element buffer.
    if unsafe { libc::pipe2(fds.as_mut_ptr(), libc::O_CLOEXEC) } != 0 {
        return Err(io::Error::last_os_error());
    }
    // SAFETY: pipe2 just returned these descriptors and nothing else owns them.
    Ok(unsafe { (OwnedFd::from_raw_fd(fds[0]), OwnedFd::from_raw_fd(fds[1])) })
}

fn signal_group(pgid: i32, signal: i32) {
    // SAFETY: killpg has no memory-safety preconditions.
    if unsafe { libc::killpg(pgid, signal) } != 0 {
        let err = io::Error::last_os_error();
        if err.raw_os_error() != Some(libc::ESRCH) {
            tracing::warn!(pgid, signal, error = %err, "killpg failed");
        }
    }
}

pub fn spawn_task(launch: &Launch<'_>, input: &Value, cfg: &ExecutorConfig) -> Result<TaskProcess, ExecutorError> {
    if !launch.entrypoint.is_file() {
        return Err(ExecutorError::MissingEntrypoint(launch.entrypoint.clone()));
    }
    let workdir = task_workdir(&cfg.workdir_root, launch.activation_id, launch.task);
    std::fs::create_dir_all(&workdir).map_err(|source| ExecutorError::Workdir { path: workdir.clone(), source })?;

    let spawn_err = |source| ExecutorError::SpawnFailure { path: launch.entrypoint.clone(), source };
    let (in_read, in_write) = pipe().map_err(spawn_err)?;
    let (out_read, out_write) = pipe().map_err(spawn_err)?;

    let mut cmd = match launch.interpreter {
        Some(interp) => {
            let mut c = Command::new(interp);
            c.arg(&launch.entrypoint);
            c
        }
        None => Command::new(&launch.entrypoint),
    };
    cmd.current_dir(&workdir)
        .env("RAPTOR_ACTIVATION_ID", launch.activation_id)
        .env("RAPTOR_TASK", launch.task)
        .env("RAPTOR_WORKDIR", &workdir)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .process_group(0);

    let (child_in, child_out) = (in_read.as_raw_fd(), out_write.as_raw_fd());
    let niceness = cfg.niceness;
    // SAFETY: only async-signal-safe calls (fcntl, dup2, close, setpriority)
    // run between fork and exec.
    unsafe {
        cmd.pre_exec(move || {
            // Lift both ends above 4 first so placing one cannot clobber the other.
            let high_in = libc::fcntl(child_in, libc::F_DUPFD, 10);
            let high_out = libc::fcntl(child_out, libc::F_DUPFD, 10);
            if high_in < 0 || high_out < 0 {
                return Err(io::Error::last_os_error());
            }
            if libc::dup2(high_in, INPUT_FD) < 0 || libc::dup2(high_out, OUTPUT_FD) < 0 {
                return Err(io::Error::last_os_error());
            }
            libc::close(high_in);
            libc::close(high_out);
            if let Some(n) = niceness {
                // Failure is detected and logged by the parent.
                libc::setpriority(libc::PRIO_PROCESS, 0, n);
            }
            Ok(())
        });
    }

    let child = cmd.spawn().map_err(spawn_err)?;
    drop(in_read);
    drop(out_write);
    let pid = child.id().expect("fresh child has a pid") as i32;

    if let Some(n) = niceness {
        // SAFETY: getpriority has no memory-safety preconditions.
        let got = unsafe { libc::getpriority(libc::PRIO_PROCESS, pid as libc::id_t) };
        if got != n {
            tracing::warn!(task = launch.task, wanted = n, got, "could not apply niceness");
        }
    }

    // The child may exit without reading; a broken pipe here is its business.
    let body = serde_json::to_vec(input).expect("json values serialize");
    let mut writer = std::fs::File::from(in_write);
    tokio::task::spawn_blocking(move || {
        let _ = writer.write_all(&body);
    });
    let mut reader = std::fs::File::from(out_read);
    let output = tokio::task::spawn_blocking(move || {
        let mut buf = Vec::new();
        reader.read_to_end(&mut buf).map(|_| buf)
    });

    tracing::debug!(task = launch.task, pid, workdir = %workdir.display(), "spawned task");
    Ok(TaskProcess {
        task: launch.task.to_string(),
        pgid: pid,
        workdir,
        started_at: Instant::now(),
        state: ProcessState::Spawned,
        task_timeout: cfg.task_timeout,
        child,
        output: Some(output),
    })
}

fn natural(status: ExitStatus) -> ProcessState {
    match (status.code(), status.signal()) {
        (Some(code), _) => ProcessState::Exited(code),
        (None, Some(sig)) => ProcessState::Crashed(sig),
        (None, None) => ProcessState::Crashed(0),
    }
}

impl TaskProcess {
    pub fn task(&self) -> &str {
        &self.task
    }

    /// Process group id, equal to the child's pid.
    pub fn pgid(&self) -> i32 {
        self.pgid
    }

    pub fn workdir(&self) -> &Path {
        &self.workdir
    }

    pub fn started_at(&self) -> Instant {
        self.started_at
    }

    pub fn state(&self) -> ProcessState {
        self.state
    }

    /// Waits for the child itself to exit, killing it at the task timeout.
    /// Cancel safe.
    pub async fn wait_exit(&mut self) -> ProcessState {
        if self.state.is_terminal() {
            return self.state;
        }
        let remaining = self.task_timeout.saturating_sub(self.started_at.elapsed());
        self.state = match tokio::time::timeout(remaining, self.child.wait()).await {
            Ok(Ok(status)) => natural(status),
            Ok(Err(e)) => {
                tracing::warn!(task = %self.task, error = %e, "wait failed");
                signal_group(self.pgid, libc::SIGKILL);
                ProcessState::Crashed(0)
            }
            Err(_) => {
                tracing::warn!(task = %self.task, "task hit the watchdog");
                signal_group(self.pgid, libc::SIGKILL);
                let _ = self.child.wait().await;
                ProcessState::TimedOut
            }
        };
        self.state
    }

    /// SIGTERM to the group, then SIGKILL if the child outlives the delay.
    pub async fn preempt(&mut self, term_to_kill_delay: Duration) -> Result<ProcessState, ExecutorError> {
        if self.state.is_terminal() {
            return Err(ExecutorError::AlreadyExited);
        }
        if let Ok(Some(status)) = self.child.try_wait() {
            self.state = natural(status);
            return Err(ExecutorError::AlreadyExited);
        }
        signal_group(self.pgid, libc::SIGTERM);
        self.state = match tokio::time::timeout(term_to_kill_delay, self.child.wait()).await {
            Ok(_) => ProcessState::Signaled,
            Err(_) => {
                tracing::debug!(task = %self.task, "grace period over, sending SIGKILL");
                signal_group(self.pgid, libc::SIGKILL);
                let _ = self.child.wait().await;
                ProcessState::Killed
            }
        };
        self.reap_group();
        Ok(self.state)
    }

    /// SIGKILL to whatever is left of the group, e.g. background stragglers.
    pub fn reap_group(&self) {
        signal_group(self.pgid, libc::SIGKILL);
    }

    /// The task's output, or null with the failure flag on any crash,
    /// abnormal exit, broken or malformed output. Waits for exit first.
    pub async fn collect_result(&mut self) -> (Value, bool) {
        let state = self.wait_exit().await;
        // Stragglers holding fd 4 would otherwise keep the reader waiting.
        self.reap_group();
        let bytes = match self.output.take() {
            Some(handle) => match tokio::time::timeout(Duration::from_secs(5), handle).await {
                Ok(Ok(Ok(bytes))) => Some(bytes),
                _ => None,
            },
            None => None,
        };
        match (state, bytes) {
            (ProcessState::Exited(0), Some(bytes)) => match serde_json::from_slice::<Value>(&bytes) {
                Ok(v) => (v, false),
                Err(e) => {
                    tracing::info!(task = %self.task, error = %e, "malformed task output");
                    (Value::Null, true)
                }
            },
            (state, _) => {
                tracing::info!(task = %self.task, ?state, "task failed");
                (Value::Null, true)
            }
        }
    }

    /// Removes the working directory. Idempotent. If removal fails, e.g.
    /// because a straggler keeps writing into it, the group is killed and
    /// removal retried once.
    pub async fn cleanup_workdir(&self) -> Result<(), ExecutorError> {
        let attempt = || match std::fs::remove_dir_all(&self.workdir) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => Err(e),
            _ => Ok(()),
        };
        if let Err(first) = attempt() {
            tracing::warn!(dir = %self.workdir.display(), error = %first, "cleanup failed, killing group and retrying");
            self.reap_group();
            tokio::time::sleep(Duration::from_millis(50)).await;
            attempt().map_err(|source| ExecutorError::CleanupFailure { path: self.workdir.clone(), source })?;
        }
        // The per-activation parent goes once its last task is gone.
        if let Some(parent) = self.workdir.parent() {
            let _ = std::fs::remove_dir(parent);
        }
        Ok(())
    }
}

impl Drop for TaskProcess {
    fn drop(&mut self) {
        if self.state == ProcessState::Spawned {
            signal_group(self.pgid, libc::SIGKILL);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskOutcome {
    Finished { output: Value, failed: bool },
    Preempted(ProcessState),
}

/// Supervises one task to the end: natural completion, or preemption when
/// `preempt` resolves first. Cleans up either way.
pub async fn supervise(
    mut process: TaskProcess,
    term_to_kill_delay: Duration,
    preempt: impl std::future::Future<Output = ()>,
) -> TaskOutcome {
    let exited = tokio::select! {
        _ = process.wait_exit() => true,
        _ = preempt => false,
    };
    let outcome = if exited {
        let (output, failed) = process.collect_result().await;
        TaskOutcome::Finished { output, failed }
    } else {
        match process.preempt(term_to_kill_delay).await {
            Ok(state) => TaskOutcome::Preempted(state),
            // Exited just before the signal; the peer's result wins anyway.
            Err(_) => {
                process.reap_group();
                TaskOutcome::Preempted(process.state())
            }
        }
    };
    if let Err(e) = process.cleanup_workdir().await {
        tracing::error!(error = %e, "workdir cleanup failed");
    }
    outcome
}

/// True for a relative path with no `..`, root or prefix components.
pub(crate) fn is_contained(path: &Path) -> bool {
    !path.as_os_str().is_empty() && path.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
}
