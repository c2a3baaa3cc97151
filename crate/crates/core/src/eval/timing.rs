use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grammar::parse_output;
use super::sandbox::{run_sandboxed, ExitKind, SandboxPolicy};
use super::{EvalError, TimingReport};

/// When to stop measuring: once at least `min_epochs` epochs agree within
/// `target_spread`, or after `max_epochs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingPolicy {
    pub min_epochs: u32,
    pub max_epochs: u32,
    pub target_spread: f64,
}

impl Default for TimingPolicy {
    fn default() -> Self {
        Self { min_epochs: 3, max_epochs: 11, target_spread: 0.05 }
    }
}

/// Epoch times collected so far.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpochStats {
    times: Vec<u64>,
}

impl EpochStats {
    pub fn push(&mut self, ns: u64) {
        self.times.push(ns);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn median(&self) -> Option<u64> {
        let mut t = self.times.clone();
        t.sort_unstable();
        let n = t.len();
        match n {
            0 => None,
            _ if n % 2 == 1 => Some(t[n / 2]),
            _ => Some(((u128::from(t[n / 2 - 1]) + u128::from(t[n / 2])) / 2) as u64),
        }
    }

    pub fn relative_spread(&self) -> Option<f64> {
        let median = self.median()? as f64;
        let max = *self.times.iter().max()? as f64;
        let min = *self.times.iter().min()? as f64;
        Some((max - min) / median)
    }

    pub fn done(&self, policy: &TimingPolicy) -> bool {
        let n = self.times.len() as u32;
        if n >= policy.max_epochs.max(1) {
            return true;
        }
        n >= policy.min_epochs.max(1)
            && self.relative_spread().is_some_and(|s| s <= policy.target_spread)
    }

    pub fn report(&self) -> Option<TimingReport> {
        Some(TimingReport {
            median_ns: self.median()?.max(1),
            samples: self.times.len() as u32,
            relative_spread: self.relative_spread()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimingEntry {
    Baseline,
    Candidate,
}

impl TimingEntry {
    pub fn as_arg(self) -> &'static str {
        match self {
            TimingEntry::Baseline => "baseline",
            TimingEntry::Candidate => "candidate",
        }
    }
}

/// Result of timing one entry point.
#[derive(Debug, Clone, PartialEq)]
pub enum TimingRun {
    Measured { report: TimingReport, digest: Option<String> },
    TimedOut,
    Crashed(String),
}

/// Invokes `binary time <entry> <seed>` repeatedly, treating every
/// `TIME_NS` line as one epoch, until `policy` is satisfied.
pub fn adaptive_time(
    binary: &Path,
    entry: TimingEntry,
    seed: u64,
    policy: &TimingPolicy,
    sandbox: &SandboxPolicy,
) -> Result<TimingRun, EvalError> {
    let program = binary.to_str().ok_or_else(|| {
        EvalError::Io(std::io::Error::new(std::io::ErrorKind::InvalidInput, "non-UTF-8 binary path"))
    })?;
    let cwd = binary.parent().unwrap_or_else(|| Path::new("."));
    let seed_arg = seed.to_string();
    let mut stats = EpochStats::default();
    let mut digest: Option<String> = None;

    while !stats.done(policy) {
        let outcome = run_sandboxed(program, &["time", entry.as_arg(), &seed_arg], cwd, sandbox)?;
        match outcome.exit {
            ExitKind::TimedOut => return Ok(TimingRun::TimedOut),
            ExitKind::Code(0) => {}
            ExitKind::Code(c) => {
                return Ok(TimingRun::Crashed(format!("{} exited with status {c}", entry.as_arg())))
            }
            ExitKind::Signal(s) => {
                return Ok(TimingRun::Crashed(format!("{} killed by signal {s}", entry.as_arg())))
            }
        }
        let parsed = parse_output(&outcome.stdout)?;
        if let Some(d) = parsed.digests.first() {
            match &digest {
                None => digest = Some(d.clone()),
                Some(prev) if prev != d => {
                    return Err(EvalError::SeedMismatch { baseline: prev.clone(), candidate: d.clone() })
                }
                Some(_) => {}
            }
        }
        if parsed.epochs.is_empty() {
            return Err(EvalError::MissingLine("TIME_NS"));
        }
        for epoch in parsed.epochs {
            stats.push(epoch.median_ns);
            if stats.done(policy) {
                break;
            }
        }
    }
    let report = stats.report().expect("at least one epoch");
    Ok(TimingRun::Measured { report, digest })
}
