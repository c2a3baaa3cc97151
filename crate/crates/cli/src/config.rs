//! Run configuration: built-in defaults, then the config file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use lesson_loop_core::agent::{AgentKind, AgentSpec};
use lesson_loop_core::eval::ToolchainProfile;
use lesson_loop_core::{Ablation, SelectionConfig, TaskKind};

pub const DEFAULT_EMBEDDING_DIM: usize = 256;
pub const DEFAULT_ROUNDS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvaluatorSpec {
    /// Fixed verdicts: a fixture file, or a directory of `<problem id>.json`.
    Scripted { fixture_path: PathBuf },
    /// Compile and time a rendered harness.
    Compiled { harness_template: PathBuf },
    /// Run generated code against the problem's tests.
    Generation {
        #[serde(default)]
        interpreter: Option<Vec<String>>,
        #[serde(default)]
        timeout_secs: Option<f64>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionOverrides {
    pub k: Option<usize>,
    pub threshold: Option<f64>,
    pub epsilon: Option<f64>,
}

/// The config file as written; every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub selection: SelectionOverrides,
    pub rounds: Option<usize>,
    pub mode: Option<TaskKind>,
    pub ablation: Option<Ablation>,
    pub seed: Option<u64>,
    pub parallel: Option<bool>,
    pub repeats: Option<usize>,
    pub embedding_dim: Option<usize>,
    pub toolchain: Option<ToolchainProfile>,
    pub pricing_path: Option<PathBuf>,
    pub evaluator: Option<EvaluatorSpec>,
}

/// Values given on the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub rounds: Option<usize>,
    pub k: Option<usize>,
    pub threshold: Option<f64>,
    pub epsilon: Option<f64>,
    pub mode: Option<TaskKind>,
    pub ablation: Option<Ablation>,
    pub seed: Option<u64>,
    pub parallel: Option<bool>,
    pub repeats: Option<usize>,
}

/// The configuration a run actually used. Its digest identifies the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveConfig {
    pub agents: Vec<AgentSpec>,
    pub selection: SelectionConfig,
    pub rounds: usize,
    pub mode: TaskKind,
    pub ablation: Ablation,
    pub seed: u64,
    pub parallel: bool,
    pub repeats: usize,
    pub embedding_dim: usize,
    pub toolchain: ToolchainProfile,
    pub pricing_path: Option<PathBuf>,
    pub evaluator: EvaluatorSpec,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: FileConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Makes relative paths relative to the config file's directory.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        for a in &mut self.agents {
            if let Some(p) = a.fixture_path.as_mut() {
                fix(p);
            }
        }
        if let Some(p) = self.pricing_path.as_mut() {
            fix(p);
        }
        match &mut self.evaluator {
            Some(EvaluatorSpec::Scripted { fixture_path }) => fix(fixture_path),
            Some(EvaluatorSpec::Compiled { harness_template }) => fix(harness_template),
            _ => {}
        }
    }
}

impl EffectiveConfig {
    pub fn resolve(file: FileConfig, flags: &Overrides) -> Result<Self> {
        let mode = flags.mode.or(file.mode).unwrap_or_default();
        let defaults = match mode {
            TaskKind::Optimize => SelectionConfig::optimize_defaults(),
            TaskKind::Generate => SelectionConfig::generate_defaults(),
        };
        let selection = SelectionConfig {
            k: flags.k.or(file.selection.k).unwrap_or(defaults.k),
            threshold: flags.threshold.or(file.selection.threshold).unwrap_or(defaults.threshold),
            epsilon: flags.epsilon.or(file.selection.epsilon).unwrap_or(defaults.epsilon),
        };
        selection.validate().context("selection settings")?;
        if file.agents.is_empty() {
            bail!("the config lists no agents");
        }
        for a in &file.agents {
            a.validate().with_context(|| format!("agent {}", a.name))?;
        }
        let evaluator = match (file.evaluator, mode) {
            (Some(e), _) => e,
            (None, TaskKind::Generate) => EvaluatorSpec::Generation { interpreter: None, timeout_secs: None },
            (None, TaskKind::Optimize) => bail!("optimization runs need an evaluator (scripted or compiled)"),
        };
        let repeats = flags.repeats.or(file.repeats).unwrap_or(1);
        if repeats == 0 {
            bail!("repeats must be at least 1");
        }
        let embedding_dim = file.embedding_dim.unwrap_or(DEFAULT_EMBEDDING_DIM);
        if embedding_dim == 0 {
            bail!("embedding_dim must be at least 1");
        }
        Ok(Self {
            agents: file.agents,
            selection,
            rounds: flags.rounds.or(file.rounds).unwrap_or(DEFAULT_ROUNDS),
            mode,
            ablation: flags.ablation.or(file.ablation).unwrap_or_default(),
            seed: flags.seed.or(file.seed).unwrap_or(0),
            parallel: flags.parallel.or(file.parallel).unwrap_or(false),
            repeats,
            embedding_dim,
            toolchain: file.toolchain.unwrap_or_default(),
            pricing_path: file.pricing_path,
            evaluator,
        })
    }

    /// Copy safe to persist: credentials embedded in endpoint URLs are
    /// replaced. Keys themselves are only ever referenced by variable name.
    pub fn redacted(&self) -> Self {
        let mut c = self.clone();
        for a in &mut c.agents {
            a.endpoint_url = redact_url(&a.endpoint_url);
        }
        c
    }

    /// sha256 over the canonical JSON of the redacted config. Object keys are
    /// sorted, so the digest does not depend on field order in the file.
    pub fn digest(&self) -> String {
        let value = serde_json::to_value(self.redacted()).expect("config serializes");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    pub fn remote_key_names(&self) -> Vec<&str> {
        self.agents
            .iter()
            .filter(|a| a.kind == AgentKind::Remote && !a.api_key_env.is_empty())
            .map(|a| a.api_key_env.as_str())
            .collect()
    }

    /// Seed of repeat `r`. Repeat 0 uses the configured seed; later repeats
    /// get distinct seeds derived from it.
    pub fn repeat_seed(&self, r: usize) -> u64 {
        if r == 0 {
            self.seed
        } else {
            splitmix64(self.seed.wrapping_add((r as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)))
        }
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Drops a `user:password@` part from a URL.
pub fn redact_url(url: &str) -> String {
    let Some(scheme_end) = url.find("://") else { return url.to_string() };
    let rest = &url[scheme_end + 3..];
    let authority_end = rest.find('/').unwrap_or(rest.len());
    match rest[..authority_end].rfind('@') {
        Some(at) => format!("{}://REDACTED@{}", &url[..scheme_end], &rest[at + 1..]),
        None => url.to_string(),
    }
}
