//! Grading of candidate code: verdicts, scenario classification, the
//! speedup clamp, and the evaluators that produce verdicts.

mod compiled;
mod generation;
pub mod grammar;
mod graph;
pub mod sandbox;
mod scripted;
mod timing;

use std::sync::{Arc, Mutex, MutexGuard, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problem::Problem;

pub use compiled::{
    render_slots, CompiledEvaluator, HarnessRenderer, RenderError, TemplateRenderer, ToolchainProfile,
};
pub use generation::GenerationEvaluator;
pub use graph::{generate_graph_input, Edge};
pub use scripted::{position_key, source_key, EvalFixture, RecordingEvaluator, ScriptedEvaluator};
pub use timing::{adaptive_time, EpochStats, TimingEntry, TimingPolicy, TimingRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalStatus {
    Faster,
    Slower,
    Incorrect,
    CompileError,
    Timeout,
    Crash,
    /// Generation mode: every test passed.
    Passed,
}

impl EvalStatus {
    pub fn is_timed(self) -> bool {
        matches!(self, EvalStatus::Faster | EvalStatus::Slower)
    }
}

/// Grading scenario a verdict falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Speed up.
    A,
    /// Slow down (including no change).
    B,
    /// Functional incorrectness, runtime crash or timeout.
    C,
    /// Does not compile.
    D,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub median_ns: u64,
    /// Number of measurement epochs.
    pub samples: u32,
    /// `(max - min) / median` over epoch times.
    pub relative_spread: f64,
}

/// Final verdict on one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub status: EvalStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speedup_raw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compiler_output: Option<String>,
    #[serde(default)]
    pub tests_passed: u32,
    #[serde(default)]
    pub tests_total: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_timing: Option<TimingReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_timing: Option<TimingReport>,
    /// Extra context for the solicitation prompt (crash or timeout details).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl EvalResult {
    fn bare(status: EvalStatus, tests_passed: u32, tests_total: u32) -> Self {
        Self {
            status,
            speedup_raw: None,
            compiler_output: None,
            tests_passed,
            tests_total,
            baseline_timing: None,
            candidate_timing: None,
            note: None,
        }
    }

    /// Correct code with the given speedup; `faster` iff `speedup > 1`.
    pub fn timed(speedup: f64, tests_total: u32) -> Self {
        assert!(speedup > 0.0 && speedup.is_finite(), "speedup must be positive");
        let status = if speedup > 1.0 { EvalStatus::Faster } else { EvalStatus::Slower };
        Self { speedup_raw: Some(speedup), ..Self::bare(status, tests_total, tests_total) }
    }

    pub fn from_timings(baseline: TimingReport, candidate: TimingReport, tests_total: u32) -> Self {
        let speedup = baseline.median_ns as f64 / candidate.median_ns as f64;
        Self {
            baseline_timing: Some(baseline),
            candidate_timing: Some(candidate),
            ..Self::timed(speedup, tests_total)
        }
    }

    pub fn incorrect(tests_passed: u32, tests_total: u32) -> Self {
        Self::bare(EvalStatus::Incorrect, tests_passed, tests_total)
    }

    pub fn compile_error(output: impl Into<String>) -> Self {
        Self { compiler_output: Some(output.into()), ..Self::bare(EvalStatus::CompileError, 0, 0) }
    }

    pub fn timeout(note: impl Into<String>) -> Self {
        Self { note: Some(note.into()), ..Self::bare(EvalStatus::Timeout, 0, 0) }
    }

    pub fn crash(note: impl Into<String>) -> Self {
        Self { note: Some(note.into()), ..Self::bare(EvalStatus::Crash, 0, 0) }
    }

    /// Generation-mode verdict from a test tally.
    pub fn tested(tests_passed: u32, tests_total: u32) -> Self {
        let status = if tests_total > 0 && tests_passed == tests_total {
            EvalStatus::Passed
        } else {
            EvalStatus::Incorrect
        };
        Self::bare(status, tests_passed, tests_total)
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    /// Fraction of tests passed; 0 when no tests ran.
    pub fn pass_fraction(&self) -> f64 {
        if self.tests_total == 0 {
            0.0
        } else {
            f64::from(self.tests_passed) / f64::from(self.tests_total)
        }
    }

    /// Checks the status/field consistency rules.
    pub fn check(&self) -> Result<(), String> {
        if self.tests_passed > self.tests_total {
            return Err("tests_passed exceeds tests_total".into());
        }
        match (self.status, self.speedup_raw) {
            (EvalStatus::Faster, Some(s)) if s > 1.0 => {}
            (EvalStatus::Slower, Some(s)) if s > 0.0 && s <= 1.0 => {}
            (EvalStatus::Faster | EvalStatus::Slower, _) => {
                return Err("timed status with inconsistent speedup".into())
            }
            (_, Some(_)) => return Err("speedup present on an untimed status".into()),
            (_, None) => {}
        }
        if (self.status == EvalStatus::CompileError) != self.compiler_output.is_some() {
            return Err("compiler_output must be present exactly for compile_error".into());
        }
        Ok(())
    }
}

pub fn classify(eval: &EvalResult) -> Scenario {
    match eval.status {
        EvalStatus::Faster | EvalStatus::Passed => Scenario::A,
        EvalStatus::Slower => Scenario::B,
        EvalStatus::Incorrect | EvalStatus::Timeout | EvalStatus::Crash => Scenario::C,
        EvalStatus::CompileError => Scenario::D,
    }
}

/// The measured speedup for faster code, otherwise 1.
pub fn clamped_speedup(eval: &EvalResult) -> f64 {
    match (eval.status, eval.speedup_raw) {
        (EvalStatus::Faster, Some(s)) => s,
        _ => 1.0,
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("i/o error during evaluation: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Grammar(#[from] grammar::GrammarError),
    #[error("harness output missing {0}")]
    MissingLine(&'static str),
    #[error("baseline and candidate saw different inputs ({baseline} vs {candidate})")]
    SeedMismatch { baseline: String, candidate: String },
    #[error("no evaluation fixture for {0}")]
    MissingFixture(String),
    #[error("generation problem `{0}` has no tests")]
    NoTests(String),
    #[error("evaluator does not handle {0} problems")]
    UnsupportedTask(&'static str),
    #[error("evaluation fixture: {0}")]
    Fixture(String),
}

/// One grading job.
#[derive(Debug, Clone, Copy)]
pub struct EvalRequest<'a> {
    pub problem: &'a Problem,
    pub source: &'a str,
    pub seed: u64,
    pub round: usize,
    pub agent_id: usize,
}

pub trait Evaluator: Send + Sync {
    fn evaluate(&self, request: &EvalRequest<'_>) -> Result<EvalResult, EvalError>;
}

impl<E: Evaluator + ?Sized> Evaluator for Arc<E> {
    fn evaluate(&self, request: &EvalRequest<'_>) -> Result<EvalResult, EvalError> {
        (**self).evaluate(request)
    }
}

impl<E: Evaluator + ?Sized> Evaluator for &E {
    fn evaluate(&self, request: &EvalRequest<'_>) -> Result<EvalResult, EvalError> {
        (**self).evaluate(request)
    }
}

/// Submits every request at once and waits for all verdicts, returned in
/// request order. Timing isolation is the evaluator's responsibility.
pub fn evaluate_all<E: Evaluator + ?Sized>(
    evaluator: &E,
    requests: &[EvalRequest<'_>],
) -> Vec<Result<EvalResult, EvalError>> {
    if requests.len() <= 1 {
        return requests.iter().map(|r| evaluator.evaluate(r)).collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = requests
            .iter()
            .map(|r| scope.spawn(move || evaluator.evaluate(r)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation thread panicked"))
            .collect()
    })
}

/// Serializes timing measurements that share a domain.
#[derive(Debug, Clone, Default)]
pub struct TimingDomain(Arc<Mutex<()>>);

impl TimingDomain {
    /// The shared per-host domain.
    pub fn host() -> Self {
        static HOST: OnceLock<TimingDomain> = OnceLock::new();
        HOST.get_or_init(TimingDomain::default).clone()
    }

    pub fn lock(&self) -> MutexGuard<'_, ()> {
        self.0.lock().unwrap_or_else(|p| p.into_inner())
    }
}
