//! Crossing the trust boundary.
//!
//! [`HarnessExecutor::execute_harness`] writes a scaffold's harness and the
//! untrusted implementation into a fresh directory, runs the harness as a
//! child process and reads back the p-value it prints. Anything the child
//! does wrong (crash, hang, garbage output, a p-value outside `[0, 1]`) is
//! returned as a [`HarnessOutcome::Failed`] value, never as an error; only
//! problems setting up the workspace are errors.
//!
//! The child reports through a single sentinel line on stdout:
//!
//! ```text
//! RIGOR_RESULT {"p_value": 0.0421, "n_pairs": 30}
//! ```
//!
//! The last line starting with the sentinel wins. Success requires exit
//! status 0 and a well-formed sentinel line.
//!
//! This is not a security sandbox. The environment is cleared down to an
//! allow-list and the child gets a wall-clock limit, nothing more.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, File};
use std::io;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::Deserialize;
use thiserror::Error;

use crate::scaffold::{audit_scaffold, Scaffold, Violation};

pub const RESULT_SENTINEL: &str = "RIGOR_RESULT";

const STDOUT_FILE: &str = "stdout.log";
const STDERR_FILE: &str = "stderr.log";
const POLL_INTERVAL: Duration = Duration::from_millis(10);
const STDERR_TAIL_LINES: usize = 20;

pub const DEFAULT_ENV_ALLOW_LIST: [&str; 5] = ["PATH", "LANG", "LC_ALL", "LC_CTYPE", "TZ"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureReason {
    NonZeroExit,
    Timeout,
    MalformedOutput,
    OutOfRangePValue,
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::NonZeroExit => "non-zero exit",
            Self::Timeout => "timeout",
            Self::MalformedOutput => "malformed output",
            Self::OutOfRangePValue => "p-value out of range",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HarnessOutcome {
    PValue { p_value: f64, n_pairs: u64 },
    Failed { reason: FailureReason, detail: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessResult {
    pub outcome: HarnessOutcome,
    /// Directory the run used; left on disk for inspection.
    pub workspace: PathBuf,
}

impl HarnessResult {
    /// The shape the session layer consumes: a p-value or a failure text.
    pub fn into_p_value(self) -> Result<f64, String> {
        match self.outcome {
            HarnessOutcome::PValue { p_value, .. } => Ok(p_value),
            HarnessOutcome::Failed { reason, detail } => Err(format!("{reason}: {detail}")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ExecutorError {
    #[error("timeout must be positive")]
    InvalidTimeout,
    #[error("interpreter command is empty")]
    EmptyCommand,
    #[error("scaffold failed audit: {}", join_violations(.0))]
    Audit(Vec<Violation>),
    #[error("workspace setup failed at {path}: {source}")]
    Workspace { path: PathBuf, source: io::Error },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseFailure {
    pub reason: FailureReason,
    pub detail: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireResult {
    p_value: f64,
    n_pairs: u64,
}

/// Parses one `RIGOR_RESULT {...}` line into `(p_value, n_pairs)`.
pub fn parse_result_line(line: &str) -> Result<(f64, u64), ParseFailure> {
    let malformed = |detail: String| ParseFailure {
        reason: FailureReason::MalformedOutput,
        detail,
    };
    let line = line.trim_end_matches(['\r', '\n']);
    let payload = line
        .strip_prefix(RESULT_SENTINEL)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| malformed(format!("missing `{RESULT_SENTINEL} ` prefix in {line:?}")))?;
    let wire: WireResult = serde_json::from_str(payload)
        .map_err(|e| malformed(format!("bad result payload {payload:?}: {e}")))?;
    if wire.n_pairs == 0 {
        return Err(malformed("n_pairs must be positive".into()));
    }
    if !(0.0..=1.0).contains(&wire.p_value) {
        return Err(ParseFailure {
            reason: FailureReason::OutOfRangePValue,
            detail: format!("p_value {} outside [0, 1]", wire.p_value),
        });
    }
    Ok((wire.p_value, wire.n_pairs))
}

/// Classifies a finished child from its exit status and stdout.
pub fn classify(status: Option<ExitStatus>, stdout: &str, stderr: &str) -> HarnessOutcome {
    let Some(status) = status else {
        return HarnessOutcome::Failed {
            reason: FailureReason::Timeout,
            detail: stderr_tail(stderr),
        };
    };
    if !status.success() {
        let code = status
            .code()
            .map_or_else(|| "terminated by signal".to_owned(), |c| format!("exit code {c}"));
        return HarnessOutcome::Failed {
            reason: FailureReason::NonZeroExit,
            detail: format!("{code}; {}", stderr_tail(stderr)),
        };
    }
    let last = stdout
        .lines()
        .rev()
        .find(|l| l.starts_with(RESULT_SENTINEL));
    match last.map(parse_result_line) {
        Some(Ok((p_value, n_pairs))) => HarnessOutcome::PValue { p_value, n_pairs },
        Some(Err(ParseFailure { reason, detail })) => HarnessOutcome::Failed { reason, detail },
        None => HarnessOutcome::Failed {
            reason: FailureReason::MalformedOutput,
            detail: "no result line on stdout".into(),
        },
    }
}

fn stderr_tail(stderr: &str) -> String {
    let lines: Vec<&str> = stderr.lines().collect();
    let start = lines.len().saturating_sub(STDERR_TAIL_LINES);
    lines[start..].join("\n")
}

#[derive(Debug, Clone)]
pub struct HarnessExecutor {
    pub work_dir: PathBuf,
    /// Interpreter and leading arguments, e.g. `["python3", "-B"]`.
    pub interpreter_command: Vec<String>,
    pub timeout: Duration,
    pub env_allow_list: BTreeSet<String>,
    /// Files in this directory (non-recursive) are copied into every
    /// workspace; this is where the verified statistics module lives.
    pub runtime_dir: Option<PathBuf>,
    /// Passed to the harness as `--seed N` when set.
    pub seed: Option<u64>,
}

impl HarnessExecutor {
    pub fn new(
        work_dir: impl Into<PathBuf>,
        interpreter_command: &str,
        timeout: Duration,
    ) -> Result<Self, ExecutorError> {
        let executor = Self {
            work_dir: work_dir.into(),
            interpreter_command: interpreter_command
                .split_whitespace()
                .map(str::to_owned)
                .collect(),
            timeout,
            env_allow_list: DEFAULT_ENV_ALLOW_LIST.iter().map(|s| s.to_string()).collect(),
            runtime_dir: None,
            seed: None,
        };
        executor.validate()?;
        Ok(executor)
    }

    pub fn with_runtime_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.runtime_dir = Some(dir.into());
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    fn validate(&self) -> Result<(), ExecutorError> {
        if self.timeout.is_zero() {
            return Err(ExecutorError::InvalidTimeout);
        }
        if self.interpreter_command.is_empty() {
            return Err(ExecutorError::EmptyCommand);
        }
        Ok(())
    }

    fn fresh_workspace(&self) -> Result<PathBuf, ExecutorError> {
        static COUNTER: AtomicU64 = AtomicU64::new(0);
        let setup_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ExecutorError::Workspace { path, source }
        };
        fs::create_dir_all(&self.work_dir).map_err(setup_err(&self.work_dir))?;
        let nanos = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.subsec_nanos());
        loop {
            let n = COUNTER.fetch_add(1, Ordering::Relaxed);
            let dir = self
                .work_dir
                .join(format!("run-{}-{n:04}-{nanos:09}", std::process::id()));
            match fs::create_dir(&dir) {
                Ok(()) => return Ok(dir),
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(setup_err(&dir)(e)),
            }
        }
    }

    fn populate(
        &self,
        dir: &Path,
        scaffold: &Scaffold,
        implementation_source: &str,
    ) -> Result<(), ExecutorError> {
        let write = |name: &str, contents: &str| {
            let path = dir.join(name);
            fs::write(&path, contents).map_err(|source| ExecutorError::Workspace { path, source })
        };
        if let Some(runtime) = &self.runtime_dir {
            let entries = fs::read_dir(runtime).map_err(|source| ExecutorError::Workspace {
                path: runtime.clone(),
                source,
            })?;
            for entry in entries {
                let entry = entry.map_err(|source| ExecutorError::Workspace {
                    path: runtime.clone(),
                    source,
                })?;
                let path = entry.path();
                if path.is_file() {
                    let target = dir.join(entry.file_name());
                    fs::copy(&path, &target)
                        .map_err(|source| ExecutorError::Workspace { path, source })?;
                }
            }
        }
        let dialect = scaffold.dialect();
        write(&dialect.harness_file_name(), scaffold.harness_source())?;
        write(&dialect.implementation_file_name(), implementation_source)?;
        Ok(())
    }

    /// Runs the scaffold's harness against `implementation_source`.
    pub fn execute_harness(
        &self,
        scaffold: &Scaffold,
        implementation_source: &str,
    ) -> Result<HarnessResult, ExecutorError> {
        self.validate()?;
        audit_scaffold(scaffold).map_err(ExecutorError::Audit)?;
        let workspace = self.fresh_workspace()?;
        self.populate(&workspace, scaffold, implementation_source)?;
        let outcome = self.run_child(&workspace, &scaffold.dialect().harness_file_name())?;
        Ok(HarnessResult { outcome, workspace })
    }

    fn run_child(&self, dir: &Path, harness_file: &str) -> Result<HarnessOutcome, ExecutorError> {
        let open = |name: &str| {
            let path = dir.join(name);
            File::create(&path).map_err(|source| ExecutorError::Workspace { path, source })
        };
        let stdout = open(STDOUT_FILE)?;
        let stderr = open(STDERR_FILE)?;

        let mut cmd = Command::new(&self.interpreter_command[0]);
        cmd.args(&self.interpreter_command[1..])
            .arg(harness_file)
            .args(["--phase", "full"])
            .current_dir(dir)
            .env_clear()
            .envs(
                self.env_allow_list
                    .iter()
                    .filter_map(|k| std::env::var_os(k).map(|v| (k, v))),
            )
            .env("PYTHONHASHSEED", "0")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .stdin(Stdio::null())
            .stdout(stdout)
            .stderr(stderr);
        if let Some(seed) = self.seed {
            cmd.args(["--seed", &seed.to_string()]);
        }
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            cmd.process_group(0);
        }

        let mut child = match cmd.spawn() {
            Ok(child) => child,
            Err(e) => {
                return Ok(HarnessOutcome::Failed {
                    reason: FailureReason::NonZeroExit,
                    detail: format!("could not start {:?}: {e}", self.interpreter_command[0]),
                })
            }
        };

        let deadline = Instant::now() + self.timeout;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) if Instant::now() >= deadline => {
                    kill_tree(&mut child);
                    break None;
                }
                Ok(None) => thread::sleep(POLL_INTERVAL),
                Err(_) => {
                    kill_tree(&mut child);
                    break None;
                }
            }
        };

        let read = |name: &str| {
            fs::read(dir.join(name))
                .map(|b| String::from_utf8_lossy(&b).into_owned())
                .unwrap_or_default()
        };
        Ok(classify(status, &read(STDOUT_FILE), &read(STDERR_FILE)))
    }
}

fn kill_tree(child: &mut std::process::Child) {
    #[cfg(unix)]
    {
        if let Ok(pid) = i32::try_from(child.id()) {
            // SAFETY: signals the process group created for this child.
            unsafe {
                libc::kill(-pid, libc::SIGKILL);
            }
        }
    }
    let _ = child.kill();
    let _ = child.wait();
}
