use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::grammar::parse_output;
use super::sandbox::{run_sandboxed, ExitKind, SandboxPolicy, DEFAULT_ENV_ALLOWLIST, DEFAULT_OUTPUT_LIMIT};
use super::timing::{adaptive_time, TimingEntry, TimingPolicy, TimingRun};
use super::{EvalError, EvalRequest, EvalResult, Evaluator, TimingDomain};
use crate::problem::{ExecMode, Problem, TaskKind};

/// How to build a harness translation unit into an executable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolchainProfile {
    /// Shell command with `{src}`, `{out}` and `{flags}` slots.
    pub compile_command_template: String,
    pub base_flags: Vec<String>,
    /// Added for problems in parallel mode.
    pub parallel_flags: Vec<String>,
    pub compile_timeout_secs: f64,
    pub run_timeout_secs: f64,
    pub source_extension: String,
    pub timing: TimingPolicy,
    pub env_allowlist: Vec<String>,
}

impl Default for ToolchainProfile {
    fn default() -> Self {
        Self {
            compile_command_template: "g++ {flags} -o {out} {src}".into(),
            base_flags: vec!["-O2".into(), "-std=c++17".into()],
            parallel_flags: vec!["-fopenmp".into()],
            compile_timeout_secs: 120.0,
            run_timeout_secs: 60.0,
            source_extension: "cpp".into(),
            timing: TimingPolicy::default(),
            env_allowlist: DEFAULT_ENV_ALLOWLIST.iter().map(|s| s.to_string()).collect(),
        }
    }
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

impl ToolchainProfile {
    pub fn flags_for(&self, mode: ExecMode) -> Vec<String> {
        let mut flags = self.base_flags.clone();
        if mode == ExecMode::Parallel {
            flags.extend(self.parallel_flags.iter().cloned());
        }
        flags
    }

    pub fn compile_command(&self, src: &Path, out: &Path, mode: ExecMode) -> String {
        self.compile_command_template
            .replace("{src}", &shell_quote(&src.to_string_lossy()))
            .replace("{out}", &shell_quote(&out.to_string_lossy()))
            .replace("{flags}", &self.flags_for(mode).join(" "))
    }

    fn policy(&self, secs: f64) -> SandboxPolicy {
        SandboxPolicy {
            timeout: Duration::from_secs_f64(secs.max(0.001)),
            output_limit: DEFAULT_OUTPUT_LIMIT,
            env_allowlist: self.env_allowlist.clone(),
        }
    }

    pub fn compile_policy(&self) -> SandboxPolicy {
        self.policy(self.compile_timeout_secs)
    }

    pub fn run_policy(&self) -> SandboxPolicy {
        self.policy(self.run_timeout_secs)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RenderError {
    #[error("template slot `{0}` has no value")]
    UnknownSlot(String),
    #[error("unterminated template slot at byte {0}")]
    Unterminated(usize),
    #[error("harness cannot be rendered: {0}")]
    Incomplete(String),
}

/// Expands `{{name}}` slots in one pass; substituted text is not rescanned.
pub fn render_slots(template: &str, slots: &[(&str, &str)]) -> Result<String, RenderError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    let mut offset = 0;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find("}}").ok_or(RenderError::Unterminated(offset + start))?;
        let name = after[..end].trim();
        let value = slots
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| RenderError::UnknownSlot(name.to_string()))?;
        out.push_str(value);
        let consumed = start + 2 + end + 2;
        offset += consumed;
        rest = &rest[consumed..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Produces the self-contained harness source for one candidate.
pub trait HarnessRenderer: Send + Sync {
    fn render(&self, problem: &Problem, candidate_source: &str, seed: u64) -> Result<String, RenderError>;
}

/// Renders a user-supplied template with the slots `{{baseline}}`,
/// `{{candidate}}`, `{{seed}}` and `{{problem_id}}`.
#[derive(Debug, Clone)]
pub struct TemplateRenderer {
    pub template: String,
}

impl HarnessRenderer for TemplateRenderer {
    fn render(&self, problem: &Problem, candidate_source: &str, seed: u64) -> Result<String, RenderError> {
        let seed = seed.to_string();
        render_slots(
            &self.template,
            &[
                ("baseline", &problem.baseline_source),
                ("candidate", candidate_source),
                ("seed", &seed),
                ("problem_id", &problem.id),
            ],
        )
    }
}

/// A timed verdict with the input digests printed by the baseline and
/// candidate entries; `Err` inside carries an untimed verdict.
type Timed = (EvalResult, [Option<String>; 2]);

/// Compiles the rendered harness, checks correctness, and times baseline
/// against candidate.
///
/// The built binary is driven as `bin check <seed>` (expects
/// `INPUT_DIGEST`, `TESTS_PASSED`, `CORRECT`) and
/// `bin time <baseline|candidate> <seed>` (expects `INPUT_DIGEST` and
/// `TIME_NS` lines).
pub struct CompiledEvaluator {
    toolchain: ToolchainProfile,
    renderer: Box<dyn HarnessRenderer>,
    domain: TimingDomain,
}

impl CompiledEvaluator {
    pub fn new(toolchain: ToolchainProfile, renderer: Box<dyn HarnessRenderer>) -> Self {
        Self { toolchain, renderer, domain: TimingDomain::host() }
    }

    pub fn with_domain(mut self, domain: TimingDomain) -> Self {
        self.domain = domain;
        self
    }

    fn time(&self, bin: &Path, seed: u64) -> Result<Result<Timed, EvalResult>, EvalError> {
        let policy = self.toolchain.run_policy();
        let _guard = self.domain.lock();
        let mut reports = Vec::with_capacity(2);
        let mut digests = [None, None];
        for (i, entry) in [TimingEntry::Baseline, TimingEntry::Candidate].into_iter().enumerate() {
            match adaptive_time(bin, entry, seed, &self.toolchain.timing, &policy)? {
                TimingRun::Measured { report, digest } => {
                    reports.push(report);
                    digests[i] = digest;
                }
                TimingRun::TimedOut => {
                    return Ok(Err(EvalResult::timeout(format!(
                        "{} timing run exceeded {}s",
                        entry.as_arg(),
                        self.toolchain.run_timeout_secs
                    ))))
                }
                TimingRun::Crashed(note) => return Ok(Err(EvalResult::crash(note))),
            }
        }
        Ok(Ok((EvalResult::from_timings(reports[0], reports[1], 0), digests)))
    }
}

impl Evaluator for CompiledEvaluator {
    fn evaluate(&self, req: &EvalRequest<'_>) -> Result<EvalResult, EvalError> {
        if req.problem.task != TaskKind::Optimize {
            return Err(EvalError::UnsupportedTask("generate"));
        }
        let unit = self.renderer.render(req.problem, req.source, req.seed)?;
        let dir = tempfile::tempdir()?;
        let src = dir.path().join(format!("harness.{}", self.toolchain.source_extension));
        let bin = dir.path().join("harness.bin");
        fs::write(&src, unit)?;

        let cmd = self.toolchain.compile_command(&src, &bin, req.problem.mode);
        let compiled = run_sandboxed("/bin/sh", &["-c", &cmd], dir.path(), &self.toolchain.compile_policy())?;
        match compiled.exit {
            ExitKind::Code(0) => {}
            ExitKind::TimedOut => {
                return Ok(EvalResult::compile_error(format!(
                    "[compile timeout after {}s]\n{}",
                    self.toolchain.compile_timeout_secs, compiled.stderr
                )))
            }
            _ => {
                let diag = if compiled.stderr.trim().is_empty() { compiled.stdout } else { compiled.stderr };
                return Ok(EvalResult::compile_error(diag));
            }
        }

        let bin_str = bin.to_string_lossy().into_owned();
        let seed = req.seed.to_string();
        let checked = run_sandboxed(&bin_str, &["check", &seed], dir.path(), &self.toolchain.run_policy())?;
        match checked.exit {
            ExitKind::Code(0) => {}
            ExitKind::TimedOut => {
                return Ok(EvalResult::timeout(format!(
                    "correctness run exceeded {}s",
                    self.toolchain.run_timeout_secs
                )))
            }
            ExitKind::Code(c) => return Ok(EvalResult::crash(format!("exited with status {c}"))),
            ExitKind::Signal(s) => return Ok(EvalResult::crash(format!("killed by signal {s}"))),
        }
        let check = parse_output(&checked.stdout)?;
        let correct = check.correct.ok_or(EvalError::MissingLine("CORRECT"))?;
        let (passed, total) = check.tests.unwrap_or(if correct { (1, 1) } else { (0, 1) });
        if !correct || passed < total {
            return Ok(EvalResult::incorrect(passed, total));
        }

        let (mut result, digests) = match self.time(&bin, req.seed)? {
            Ok(r) => r,
            Err(failure) => return Ok(failure),
        };
        let reference = check.digests.first().cloned().or_else(|| digests[0].clone());
        for d in digests.iter().flatten() {
            if let Some(r) = &reference {
                if r != d {
                    return Err(EvalError::SeedMismatch { baseline: r.clone(), candidate: d.clone() });
                }
            }
        }
        result.tests_passed = passed;
        result.tests_total = total;
        Ok(result)
    }
}
