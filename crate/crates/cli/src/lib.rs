//! Batch runner: loads a problem set and a run configuration, drives the
//! orchestrator over every problem, and keeps a replayable record of the run.

pub mod commands;
pub mod config;
pub mod rundir;

pub use commands::{cmd_ablate, cmd_replay, cmd_report, cmd_run, Divergence, ReportFormat, RunOutcome, RunRequest};
pub use config::{EffectiveConfig, EvaluatorSpec, FileConfig, Overrides};
pub use rundir::{Manifest, RUN_ROOT_ENV};
