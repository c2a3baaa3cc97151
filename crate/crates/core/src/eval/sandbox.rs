//! Running untrusted processes with a wall-clock limit, a cleared
//! environment, and bounded output capture.

use std::io::Read;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use wait_timeout::ChildExt;

pub const DEFAULT_OUTPUT_LIMIT: usize = 1 << 20;

/// Variables passed through to sandboxed processes when set.
pub const DEFAULT_ENV_ALLOWLIST: &[&str] = &["PATH", "LANG", "OMP_NUM_THREADS", "TMPDIR"];

#[derive(Debug, Clone)]
pub struct SandboxPolicy {
    pub timeout: Duration,
    pub output_limit: usize,
    pub env_allowlist: Vec<String>,
}

impl SandboxPolicy {
    pub fn with_timeout(timeout: Duration) -> Self {
        Self {
            timeout,
            output_limit: DEFAULT_OUTPUT_LIMIT,
            env_allowlist: DEFAULT_ENV_ALLOWLIST.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Code(i32),
    Signal(i32),
    TimedOut,
}

#[derive(Debug, Clone)]
pub struct ProcessOutcome {
    pub exit: ExitKind,
    pub stdout: String,
    pub stderr: String,
    /// Either stream exceeded the output limit and was cut.
    pub truncated: bool,
    pub elapsed: Duration,
}

impl ProcessOutcome {
    pub fn success(&self) -> bool {
        self.exit == ExitKind::Code(0)
    }
}

fn drain<R: Read + Send + 'static>(mut stream: R, limit: usize) -> thread::JoinHandle<(Vec<u8>, bool)> {
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut truncated = false;
        let mut buf = [0u8; 8192];
        loop {
            match stream.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = limit.saturating_sub(kept.len());
                    if n > room {
                        truncated = true;
                    }
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
            }
        }
        (kept, truncated)
    })
}

fn kill_group(child: &Child) {
    let pgid = child.id() as libc::pid_t;
    // SAFETY: sending a signal has no memory-safety preconditions; ESRCH is fine.
    unsafe {
        libc::kill(-pgid, libc::SIGKILL);
    }
}

/// Runs `program` with `args` in `cwd` under `policy`. The child becomes the
/// leader of a new process group, and the whole group is killed on timeout.
pub fn run_sandboxed(
    program: &str,
    args: &[&str],
    cwd: &Path,
    policy: &SandboxPolicy,
) -> std::io::Result<ProcessOutcome> {
    let mut cmd = Command::new(program);
    cmd.args(args)
        .current_dir(cwd)
        .env_clear()
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    for key in &policy.env_allowlist {
        if let Some(v) = std::env::var_os(key) {
            cmd.env(key, v);
        }
    }

    let start = Instant::now();
    let mut child = cmd.spawn()?;
    let out = drain(child.stdout.take().expect("piped stdout"), policy.output_limit);
    let err = drain(child.stderr.take().expect("piped stderr"), policy.output_limit);

    let exit = match child.wait_timeout(policy.timeout)? {
        Some(status) => match (status.code(), status.signal()) {
            (Some(code), _) => ExitKind::Code(code),
            (None, Some(sig)) => ExitKind::Signal(sig),
            (None, None) => ExitKind::Signal(0),
        },
        None => {
            kill_group(&child);
            child.wait()?;
            ExitKind::TimedOut
        }
    };
    let elapsed = start.elapsed();
    // reap stragglers that still hold the pipes
    kill_group(&child);

    let (stdout, t1) = out.join().expect("stdout reader panicked");
    let (stderr, t2) = err.join().expect("stderr reader panicked");
    Ok(ProcessOutcome {
        exit,
        stdout: String::from_utf8_lossy(&stdout).into_owned(),
        stderr: String::from_utf8_lossy(&stderr).into_owned(),
        truncated: t1 || t2,
        elapsed,
    })
}
