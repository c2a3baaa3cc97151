//! On-disk layout of a run.
//!
//! ```text
//! <root>/<timestamp>-<digest prefix>/
//!   manifest.json              written before any problem runs
//!   complete.json              written last; its absence marks a partial run
//!   report.json, report.csv
//!   repeats/<r>/<problem id>/
//!     problem.json  transcript.jsonl  bank.jsonl  result.json | error.txt
//!     fixtures/agent<j>.json  fixtures/eval.json
//! ```
//!
//! Files are only ever created, never rewritten, while a run is in progress.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::EffectiveConfig;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const RUN_ROOT_ENV: &str = "LESSONL_RUN_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub config_digest: String,
    /// Redacted effective configuration.
    pub config: EffectiveConfig,
    pub problem_ids: Vec<String>,
    /// Seed of each repeat.
    pub seeds: Vec<u64>,
    pub started_at: String,
    /// Problem directories relative to the run directory.
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub finished_at: String,
    pub problems_completed: usize,
    pub problems_failed: usize,
}

/// `LESSONL_RUN_ROOT`, or `runs` under the working directory.
pub fn run_root() -> PathBuf {
    std::env::var_os(RUN_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Creates a fresh run directory under `root`.
pub fn create_run_dir(root: &Path, digest: &str) -> Result<PathBuf> {
    fs::create_dir_all(root).with_context(|| format!("creating run root {}", root.display()))?;
    let stem = format!("{}-{}", chrono::Utc::now().format("%Y%m%dT%H%M%SZ"), &digest[..12.min(digest.len())]);
    for n in 0.. {
        let name = if n == 0 { stem.clone() } else { format!("{stem}-{n}") };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    unreachable!()
}

pub fn problem_rel(repeat: usize, problem_id: &str) -> String {
    format!("repeats/{repeat}/{problem_id}")
}

/// Writes a file that must not exist yet.
pub fn create_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut f = fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .with_context(|| format!("creating {}", path.display()))?;
    std::io::Write::write_all(&mut f, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn create_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    create_file(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

impl Manifest {
    pub fn path(run_dir: &Path) -> PathBuf {
        run_dir.join("manifest.json")
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let m: Manifest = read_json(&Self::path(run_dir))?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            bail!("unsupported manifest schema version {}", m.schema_version);
        }
        if m.seeds.len() != m.config.repeats {
            bail!("manifest lists {} seeds for {} repeats", m.seeds.len(), m.config.repeats);
        }
        Ok(m)
    }
}

impl Completion {
    pub fn path(run_dir: &Path) -> PathBuf {
        run_dir.join("complete.json")
    }
}
