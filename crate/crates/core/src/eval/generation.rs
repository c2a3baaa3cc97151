use std::fs;
use std::time::Duration;

use super::sandbox::{run_sandboxed, SandboxPolicy};
use super::{EvalError, EvalRequest, EvalResult, Evaluator};
use crate::problem::TaskKind;

/// Runs generated code against each test case with an interpreter. A test
/// passes when the program (candidate followed by the test code) exits 0
/// within the per-test timeout.
#[derive(Debug, Clone)]
pub struct GenerationEvaluator {
    pub interpreter: Vec<String>,
    pub extension: String,
    pub sandbox: SandboxPolicy,
}

impl Default for GenerationEvaluator {
    fn default() -> Self {
        Self {
            interpreter: vec!["python3".into()],
            extension: "py".into(),
            sandbox: SandboxPolicy::with_timeout(Duration::from_secs(10)),
        }
    }
}

impl Evaluator for GenerationEvaluator {
    fn evaluate(&self, req: &EvalRequest<'_>) -> Result<EvalResult, EvalError> {
        if req.problem.task != TaskKind::Generate {
            return Err(EvalError::UnsupportedTask("optimize"));
        }
        let tests = &req.problem.tests;
        if tests.is_empty() {
            return Err(EvalError::NoTests(req.problem.id.clone()));
        }
        let (program, pre_args) = self
            .interpreter
            .split_first()
            .ok_or_else(|| EvalError::Fixture("empty interpreter command".into()))?;
        let dir = tempfile::tempdir()?;
        let mut passed = 0u32;
        let mut timeouts = 0u32;
        for (i, test) in tests.iter().enumerate() {
            let path = dir.path().join(format!("test_{i}.{}", self.extension));
            fs::write(&path, format!("{}\n\n{}\n", req.source, test.code))?;
            let path = path.to_string_lossy().into_owned();
            let mut args: Vec<&str> = pre_args.iter().map(String::as_str).collect();
            args.push(&path);
            let outcome = run_sandboxed(program, &args, dir.path(), &self.sandbox)?;
            if outcome.success() {
                passed += 1;
            } else if outcome.exit == super::sandbox::ExitKind::TimedOut {
                timeouts += 1;
            }
        }
        let total = tests.len() as u32;
        let result = EvalResult::tested(passed, total);
        Ok(if timeouts > 0 {
            result.with_note(format!("{timeouts} test(s) timed out"))
        } else {
            result
        })
    }
}
