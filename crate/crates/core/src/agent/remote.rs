use std::fmt;
use std::thread;
use std::time::Duration;

use rand::Rng;
use serde_json::{json, Value};

use super::{Agent, AgentError, AgentRequest, AgentSpec, AgentUsage, CompletionReply, HeuristicCounter, TokenCounter};

/// Exponential backoff with jitter for transient failures (transport
/// errors, 429 and 5xx).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
    /// Adds up to this fraction of the delay, uniformly at random.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_delay: Duration::from_millis(500), factor: 2.0, jitter: 0.25 }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based), without jitter.
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay.mul_f64(self.factor.powi(retry as i32))
    }
}

/// Chat-completions client for OpenAI-compatible endpoints.
pub struct RemoteAgent {
    name: String,
    url: String,
    model: String,
    temperature: f64,
    frequency_penalty: f64,
    max_output_tokens: Option<u32>,
    api_key: String,
    retry: RetryPolicy,
    counter: Box<dyn TokenCounter>,
    client: reqwest::blocking::Client,
}

impl fmt::Debug for RemoteAgent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteAgent")
            .field("name", &self.name)
            .field("url", &self.url)
            .field("model", &self.model)
            .field("api_key", &"<redacted>")
            .finish_non_exhaustive()
    }
}

impl RemoteAgent {
    /// Reads the API key from the environment variable named by `spec.api_key_env`.
    pub fn from_spec(spec: &AgentSpec) -> Result<Self, AgentError> {
        if spec.api_key_env.is_empty() {
            return Err(AgentError::Config(format!("{}: api_key_env is not set", spec.name)));
        }
        let api_key = std::env::var(&spec.api_key_env).map_err(|_| {
            AgentError::Config(format!(
                "{}: environment variable {} is not set",
                spec.name, spec.api_key_env
            ))
        })?;
        Self::with_key(spec, api_key)
    }

    pub fn with_key(spec: &AgentSpec, api_key: String) -> Result<Self, AgentError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(600))
            .build()
            .map_err(|e| AgentError::Config(e.to_string()))?;
        Ok(Self {
            name: spec.name.clone(),
            url: format!("{}/chat/completions", spec.endpoint_url.trim_end_matches('/')),
            model: spec.model.clone(),
            temperature: spec.temperature,
            frequency_penalty: spec.frequency_penalty,
            max_output_tokens: spec.max_output_tokens,
            api_key,
            retry: RetryPolicy::default(),
            counter: Box::new(HeuristicCounter),
            client,
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_counter(mut self, counter: Box<dyn TokenCounter>) -> Self {
        self.counter = counter;
        self
    }

    fn body(&self, prompt: &str) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            "frequency_penalty": self.frequency_penalty,
        });
        if let Some(max) = self.max_output_tokens {
            body["max_tokens"] = json!(max);
        }
        body
    }

    fn attempt(&self, body: &Value) -> Result<Value, Attempt> {
        let resp = self
            .client
            .post(&self.url)
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
            .map_err(|e| Attempt::Transient(without_url(e)))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Attempt::Transient(without_url(e)))?;
        if status.is_success() {
            serde_json::from_str(&text).map_err(|e| Attempt::Fatal(AgentError::Protocol(e.to_string())))
        } else if status.as_u16() == 429 || status.is_server_error() {
            Attempt::transient_http(status.as_u16(), text)
        } else {
            Err(Attempt::Fatal(AgentError::Http { status: status.as_u16(), body: truncate(text) }))
        }
    }

    fn parse(&self, prompt: &str, value: &Value) -> Result<CompletionReply, AgentError> {
        let text = value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| AgentError::Protocol("missing choices[0].message.content".into()))?
            .to_string();
        let reported = |field: &str| value.pointer(&format!("/usage/{field}")).and_then(Value::as_u64);
        let input = reported("prompt_tokens").unwrap_or_else(|| self.counter.count(prompt));
        let output = reported("completion_tokens").unwrap_or_else(|| self.counter.count(&text));
        Ok(CompletionReply { text, usage_delta: AgentUsage::one_call(input, output) })
    }
}

enum Attempt {
    Transient(String),
    Fatal(AgentError),
}

impl Attempt {
    fn transient_http(status: u16, body: String) -> Result<Value, Attempt> {
        Err(Attempt::Transient(format!("HTTP {status}: {}", truncate(body))))
    }
}

fn without_url(e: reqwest::Error) -> String {
    e.without_url().to_string()
}

fn truncate(mut s: String) -> String {
    const MAX: usize = 512;
    if s.len() > MAX {
        let mut cut = MAX;
        while !s.is_char_boundary(cut) {
            cut -= 1;
        }
        s.truncate(cut);
        s.push_str("...");
    }
    s
}

impl Agent for RemoteAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, req: &AgentRequest<'_>) -> Result<CompletionReply, AgentError> {
        let body = self.body(req.prompt);
        let attempts = self.retry.max_attempts.max(1);
        let mut last = String::new();
        for n in 0..attempts {
            if n > 0 {
                let delay = self.retry.delay(n - 1);
                let jitter = delay.mul_f64(rand::thread_rng().gen_range(0.0..=self.retry.jitter.max(0.0)));
                thread::sleep(delay + jitter);
            }
            match self.attempt(&body) {
                Ok(value) => return self.parse(req.prompt, &value),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Transient(msg)) => {
                    log::warn!("{}: attempt {} of {} failed: {msg}", self.name, n + 1, attempts);
                    last = msg;
                }
            }
        }
        Err(AgentError::Transport { attempts, message: last })
    }
}
