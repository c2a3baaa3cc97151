use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Agent, AgentError, AgentRequest, AgentUsage, CompletionReply, HeuristicCounter, PromptClass, TokenCounter};

/// `"<class>:<round>:<agent>"`, e.g. `"solicit-a:2:1"`.
pub fn fixture_key(class: PromptClass, round: usize, agent_id: usize) -> String {
    format!("{class}:{round}:{agent_id}")
}

/// `"sha256:<hex of prompt>"`.
pub fn strict_key(prompt: &str) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(prompt.as_bytes())))
}

/// One canned reply. Missing token counts fall back to the heuristic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_tokens: Option<u64>,
}

impl FixtureEntry {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), input_tokens: None, output_tokens: None }
    }
}

/// Agent that answers from a fixture map. By default it looks up the
/// positional key, then the prompt digest; strict mode uses only the digest.
pub struct ScriptedAgent {
    name: String,
    replies: BTreeMap<String, FixtureEntry>,
    strict: bool,
    counter: Box<dyn TokenCounter>,
}

impl ScriptedAgent {
    pub fn new(name: impl Into<String>, replies: BTreeMap<String, FixtureEntry>) -> Self {
        Self { name: name.into(), replies, strict: false, counter: Box::new(HeuristicCounter) }
    }

    pub fn from_json(name: impl Into<String>, text: &str) -> Result<Self, AgentError> {
        let replies = serde_json::from_str(text).map_err(|e| AgentError::Fixture(e.to_string()))?;
        Ok(Self::new(name, replies))
    }

    pub fn from_file(name: impl Into<String>, path: &Path) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AgentError::Fixture(format!("{}: {e}", path.display())))?;
        Self::from_json(name, &text)
    }

    pub fn set_strict(&mut self, strict: bool) {
        self.strict = strict;
    }

    pub fn with_counter(mut self, counter: Box<dyn TokenCounter>) -> Self {
        self.counter = counter;
        self
    }

    pub fn reply(mut self, class: PromptClass, round: usize, agent_id: usize, text: impl Into<String>) -> Self {
        self.replies.insert(fixture_key(class, round, agent_id), FixtureEntry::text(text));
        self
    }

    fn lookup(&self, req: &AgentRequest<'_>) -> Result<&FixtureEntry, AgentError> {
        let digest = strict_key(req.prompt);
        let found = if self.strict {
            self.replies.get(&digest)
        } else {
            self.replies
                .get(&fixture_key(req.class, req.round, req.agent_id))
                .or_else(|| self.replies.get(&digest))
        };
        found.ok_or_else(|| {
            AgentError::Fixture(format!(
                "{}: no reply for {} ({digest})",
                self.name,
                fixture_key(req.class, req.round, req.agent_id)
            ))
        })
    }
}

impl Agent for ScriptedAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, req: &AgentRequest<'_>) -> Result<CompletionReply, AgentError> {
        let entry = self.lookup(req)?;
        let input = entry.input_tokens.unwrap_or_else(|| self.counter.count(req.prompt));
        let output = entry.output_tokens.unwrap_or_else(|| self.counter.count(&entry.text));
        Ok(CompletionReply { text: entry.text.clone(), usage_delta: AgentUsage::one_call(input, output) })
    }
}

#[derive(Default)]
struct Captured {
    positional: BTreeMap<String, FixtureEntry>,
    by_digest: BTreeMap<String, FixtureEntry>,
}

/// Wraps an agent and captures every reply with its token counts, so the
/// exchange can be replayed by a [`ScriptedAgent`].
pub struct RecordingAgent<A> {
    inner: A,
    captured: Mutex<Captured>,
}

impl<A: Agent> RecordingAgent<A> {
    pub fn new(inner: A) -> Self {
        Self { inner, captured: Mutex::new(Captured::default()) }
    }

    /// Captured replies under positional keys.
    pub fn recorded(&self) -> BTreeMap<String, FixtureEntry> {
        self.captured.lock().unwrap().positional.clone()
    }

    /// Captured replies under prompt-digest keys.
    pub fn recorded_strict(&self) -> BTreeMap<String, FixtureEntry> {
        self.captured.lock().unwrap().by_digest.clone()
    }
}

impl<A: Agent> Agent for RecordingAgent<A> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, req: &AgentRequest<'_>) -> Result<CompletionReply, AgentError> {
        let reply = self.inner.complete(req)?;
        let entry = FixtureEntry {
            text: reply.text.clone(),
            input_tokens: Some(reply.usage_delta.input_tokens),
            output_tokens: Some(reply.usage_delta.output_tokens),
        };
        let mut captured = self.captured.lock().unwrap();
        captured.positional.insert(fixture_key(req.class, req.round, req.agent_id), entry.clone());
        captured.by_digest.insert(strict_key(req.prompt), entry);
        Ok(reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(class: PromptClass, round: usize, agent_id: usize, prompt: &str) -> AgentRequest<'_> {
        AgentRequest { class, round, agent_id, prompt }
    }

    #[test]
    fn positional_then_digest_lookup() {
        let mut agent = ScriptedAgent::new("s", BTreeMap::new()).reply(PromptClass::Initial, 0, 1, "hello");
        agent.replies.insert(strict_key("exact prompt"), FixtureEntry::text("by digest"));
        assert_eq!(agent.complete(&req(PromptClass::Initial, 0, 1, "x")).unwrap().text, "hello");
        assert_eq!(agent.complete(&req(PromptClass::Improve, 3, 1, "exact prompt")).unwrap().text, "by digest");
        assert!(matches!(
            agent.complete(&req(PromptClass::Improve, 3, 1, "other")),
            Err(AgentError::Fixture(_))
        ));
        agent.set_strict(true);
        assert!(agent.complete(&req(PromptClass::Initial, 0, 1, "x")).is_err());
    }

    #[test]
    fn token_counts_prefer_fixture_values() {
        let agent = ScriptedAgent::from_json(
            "s",
            r#"{"initial:0:0": {"text": "abcdefgh", "input_tokens": 100, "output_tokens": 7},
                "improve:1:0": {"text": "abcdefgh"}}"#,
        )
        .unwrap();
        let a = agent.complete(&req(PromptClass::Initial, 0, 0, "p")).unwrap();
        assert_eq!(a.usage_delta, AgentUsage::one_call(100, 7));
        let b = agent.complete(&req(PromptClass::Improve, 1, 0, "12345")).unwrap();
        assert_eq!(b.usage_delta, AgentUsage::one_call(2, 2));
    }

    #[test]
    fn recording_round_trips() {
        let agent = ScriptedAgent::new("s", BTreeMap::new())
            .reply(PromptClass::SolicitA, 2, 0, "Loop reordering helps.");
        let recorder = RecordingAgent::new(agent);
        recorder.complete(&req(PromptClass::SolicitA, 2, 0, "why faster?")).unwrap();

        let replay = ScriptedAgent::new("r", recorder.recorded());
        let r = replay.complete(&req(PromptClass::SolicitA, 2, 0, "anything")).unwrap();
        assert_eq!(r.text, "Loop reordering helps.");

        let mut strict = ScriptedAgent::new("r", recorder.recorded_strict());
        strict.set_strict(true);
        assert!(strict.complete(&req(PromptClass::SolicitA, 9, 9, "why faster?")).is_ok());
        assert!(strict.complete(&req(PromptClass::SolicitA, 2, 0, "changed")).is_err());
    }
}
