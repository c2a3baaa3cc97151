use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use super::{EvalError, EvalRequest, EvalResult, Evaluator};

/// Verdicts keyed by `"<round>:<agent>"`, by `"sha256:<hex of source>"`, or
/// the catch-all `"default"`.
pub type EvalFixture = BTreeMap<String, EvalResult>;

pub fn position_key(round: usize, agent_id: usize) -> String {
    format!("{round}:{agent_id}")
}

pub fn source_key(source: &str) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(source.as_bytes())))
}

/// Mock evaluator that replays fixed verdicts.
#[derive(Debug, Clone, Default)]
pub struct ScriptedEvaluator {
    verdicts: EvalFixture,
}

impl ScriptedEvaluator {
    pub fn new(verdicts: EvalFixture) -> Result<Self, EvalError> {
        for (key, v) in &verdicts {
            v.check().map_err(|e| EvalError::Fixture(format!("{key}: {e}")))?;
        }
        Ok(Self { verdicts })
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let verdicts: EvalFixture =
            serde_json::from_str(text).map_err(|e| EvalError::Fixture(e.to_string()))?;
        Self::new(verdicts)
    }

    pub fn from_file(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EvalError::Fixture(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn insert(&mut self, key: impl Into<String>, verdict: EvalResult) -> &mut Self {
        self.verdicts.insert(key.into(), verdict);
        self
    }

    pub fn at(mut self, round: usize, agent_id: usize, verdict: EvalResult) -> Self {
        self.insert(position_key(round, agent_id), verdict);
        self
    }
}

impl Evaluator for ScriptedEvaluator {
    fn evaluate(&self, req: &EvalRequest<'_>) -> Result<EvalResult, EvalError> {
        let pos = position_key(req.round, req.agent_id);
        self.verdicts
            .get(&pos)
            .or_else(|| self.verdicts.get(&source_key(req.source)))
            .or_else(|| self.verdicts.get("default"))
            .cloned()
            .ok_or(EvalError::MissingFixture(pos))
    }
}

/// Wraps an evaluator and keeps every verdict by position, so a run can be
/// replayed with a [`ScriptedEvaluator`].
pub struct RecordingEvaluator<E> {
    inner: E,
    seen: Mutex<EvalFixture>,
}

impl<E: Evaluator> RecordingEvaluator<E> {
    pub fn new(inner: E) -> Self {
        Self { inner, seen: Mutex::new(BTreeMap::new()) }
    }

    pub fn recorded(&self) -> EvalFixture {
        self.seen.lock().unwrap().clone()
    }
}

impl<E: Evaluator> Evaluator for RecordingEvaluator<E> {
    fn evaluate(&self, req: &EvalRequest<'_>) -> Result<EvalResult, EvalError> {
        let verdict = self.inner.evaluate(req)?;
        self.seen
            .lock()
            .unwrap()
            .insert(position_key(req.round, req.agent_id), verdict.clone());
        Ok(verdict)
    }
}
