//! Agents: a uniform interface over remote chat-completion models and
//! fixture-backed scripted agents, plus token accounting.

mod extract;
mod remote;
mod scripted;
#[doc(hidden)]
pub mod stub_server;
mod tokens;

use std::fmt;
use std::ops::{Add, AddAssign};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use extract::{extract_code_block, ExtractError};
pub use remote::{RemoteAgent, RetryPolicy};
pub use scripted::{fixture_key, strict_key, FixtureEntry, RecordingAgent, ScriptedAgent};
pub use tokens::{FnCounter, HeuristicCounter, TokenCounter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AgentUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub calls: u64,
}

impl AgentUsage {
    pub fn one_call(input_tokens: u64, output_tokens: u64) -> Self {
        Self { input_tokens, output_tokens, calls: 1 }
    }

    pub fn total_tokens(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

impl Add for AgentUsage {
    type Output = AgentUsage;

    fn add(self, rhs: Self) -> Self {
        AgentUsage {
            input_tokens: self.input_tokens + rhs.input_tokens,
            output_tokens: self.output_tokens + rhs.output_tokens,
            calls: self.calls + rhs.calls,
        }
    }
}

impl AddAssign for AgentUsage {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for AgentUsage {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(AgentUsage::default(), Add::add)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionReply {
    pub text: String,
    pub usage_delta: AgentUsage,
}

/// What a prompt is for. Scripted fixtures are keyed on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptClass {
    #[serde(rename = "initial")]
    Initial,
    #[serde(rename = "improve")]
    Improve,
    /// Lesson for faster code.
    #[serde(rename = "solicit-a")]
    SolicitA,
    /// Lesson for slower code.
    #[serde(rename = "solicit-b")]
    SolicitB,
    /// Lesson for incorrect code.
    #[serde(rename = "solicit-c")]
    SolicitC,
    /// Lesson for code that does not compile.
    #[serde(rename = "solicit-d")]
    SolicitD,
}

impl PromptClass {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptClass::Initial => "initial",
            PromptClass::Improve => "improve",
            PromptClass::SolicitA => "solicit-a",
            PromptClass::SolicitB => "solicit-b",
            PromptClass::SolicitC => "solicit-c",
            PromptClass::SolicitD => "solicit-d",
        }
    }
}

impl fmt::Display for PromptClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One single-turn request to an agent.
#[derive(Debug, Clone, Copy)]
pub struct AgentRequest<'a> {
    pub class: PromptClass,
    pub round: usize,
    pub agent_id: usize,
    pub prompt: &'a str,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("agent configuration: {0}")]
    Config(String),
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    Protocol(String),
    #[error("fixture: {0}")]
    Fixture(String),
}

pub trait Agent: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, request: &AgentRequest<'_>) -> Result<CompletionReply, AgentError>;
}

impl<A: Agent + ?Sized> Agent for &A {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, request: &AgentRequest<'_>) -> Result<CompletionReply, AgentError> {
        (**self).complete(request)
    }
}

impl<A: Agent + ?Sized> Agent for Box<A> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, request: &AgentRequest<'_>) -> Result<CompletionReply, AgentError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Remote,
    Scripted,
}

fn default_temperature() -> f64 {
    0.2
}

fn default_frequency_penalty() -> f64 {
    0.5
}

/// Declarative description of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub name: String,
    pub kind: AgentKind,
    #[serde(default)]
    pub endpoint_url: String,
    #[serde(default)]
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_frequency_penalty")]
    pub frequency_penalty: f64,
    #[serde(default)]
    pub max_output_tokens: Option<u32>,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: String,
    #[serde(default)]
    pub fixture_path: Option<PathBuf>,
    /// Key scripted fixtures on a digest of the full prompt.
    #[serde(default)]
    pub strict_fixture: bool,
}

impl AgentSpec {
    pub fn scripted(name: impl Into<String>, fixture_path: impl Into<PathBuf>) -> Self {
        Self {
            name: name.into(),
            kind: AgentKind::Scripted,
            endpoint_url: String::new(),
            model: "scripted".into(),
            temperature: default_temperature(),
            frequency_penalty: default_frequency_penalty(),
            max_output_tokens: None,
            api_key_env: String::new(),
            fixture_path: Some(fixture_path.into()),
            strict_fixture: false,
        }
    }

    pub fn remote(
        name: impl Into<String>,
        endpoint_url: impl Into<String>,
        model: impl Into<String>,
        api_key_env: impl Into<String>,
    ) -> Self {
        Self {
            kind: AgentKind::Remote,
            endpoint_url: endpoint_url.into(),
            model: model.into(),
            api_key_env: api_key_env.into(),
            fixture_path: None,
            ..Self::scripted(name, "")
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if !(self.temperature >= 0.0) {
            return Err(AgentError::Config(format!("{}: temperature must be >= 0", self.name)));
        }
        match self.kind {
            AgentKind::Remote if self.endpoint_url.is_empty() || self.model.is_empty() => Err(
                AgentError::Config(format!("{}: remote agents need endpoint_url and model", self.name)),
            ),
            AgentKind::Scripted if self.fixture_path.as_ref().is_none_or(|p| p.as_os_str().is_empty()) => {
                Err(AgentError::Config(format!("{}: scripted agents need fixture_path", self.name)))
            }
            _ => Ok(()),
        }
    }

    /// Instantiates the agent. Remote agents read their API key here, so a
    /// missing key fails before any network call.
    pub fn build(&self) -> Result<Box<dyn Agent>, AgentError> {
        self.validate()?;
        match self.kind {
            AgentKind::Remote => Ok(Box::new(RemoteAgent::from_spec(self)?)),
            AgentKind::Scripted => {
                let path = self.fixture_path.as_ref().expect("validated");
                let mut agent = ScriptedAgent::from_file(&self.name, path)?;
                agent.set_strict(self.strict_fixture);
                Ok(Box::new(agent))
            }
        }
    }
}
