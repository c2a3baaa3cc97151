use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};

use lesson_loop_core::agent::{Agent, AgentSpec, FixtureEntry, RecordingAgent, ScriptedAgent};
use lesson_loop_core::eval::sandbox::SandboxPolicy;
use lesson_loop_core::eval::{
    CompiledEvaluator, GenerationEvaluator, RecordingEvaluator, ScriptedEvaluator, TemplateRenderer,
};
use lesson_loop_core::lesson::HashEmbedder;
use lesson_loop_core::metrics::{
    estimate_cost, estimate_flops, load_pricing, parse_pricing, summarize, BenchmarkSummary, RepeatStats, Report,
    DEFAULT_PRICING_JSON, REPORT_SCHEMA_VERSION,
};
use lesson_loop_core::orchestrator::first_divergence;
use lesson_loop_core::problem::{load_problem_set, ExecMode};
use lesson_loop_core::{run, Ablation, AgentUsage, Evaluator, Problem, RunConfig, RunResult};

use crate::config::{EffectiveConfig, EvaluatorSpec, FileConfig, Overrides};
use crate::rundir::{self, create_file, create_json, problem_rel, read_json, Completion, Manifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format '{other}' (expected json or csv)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunRequest {
    pub problems: PathBuf,
    pub config: Option<PathBuf>,
    pub overrides: Overrides,
    /// Overrides `LESSONL_RUN_ROOT`.
    pub output_root: Option<PathBuf>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub report: Option<Report>,
    /// Problems whose run failed, as `repeat/problem: error`.
    pub failures: Vec<String>,
}

/// Agents and evaluator for one problem, built before the run directory
/// exists so that configuration errors leave nothing behind.
struct Prepared {
    problem: Problem,
    agents: Vec<(String, Box<dyn Agent>)>,
    evaluator: Box<dyn Evaluator>,
}

fn per_problem_path(path: &Path, problem_id: &str) -> PathBuf {
    if path.is_dir() {
        path.join(format!("{problem_id}.json"))
    } else {
        path.to_path_buf()
    }
}

fn build_agent(spec: &AgentSpec, problem_id: &str) -> Result<Box<dyn Agent>> {
    let mut spec = spec.clone();
    if let Some(p) = &spec.fixture_path {
        spec.fixture_path = Some(per_problem_path(p, problem_id));
    }
    spec.build().with_context(|| format!("agent {}", spec.name))
}

fn build_evaluator(cfg: &EffectiveConfig, problem_id: &str) -> Result<Box<dyn Evaluator>> {
    Ok(match &cfg.evaluator {
        EvaluatorSpec::Scripted { fixture_path } => {
            let path = per_problem_path(fixture_path, problem_id);
            Box::new(ScriptedEvaluator::from_file(&path).context("scripted evaluator")?)
        }
        EvaluatorSpec::Compiled { harness_template } => {
            let template = std::fs::read_to_string(harness_template)
                .with_context(|| format!("reading harness template {}", harness_template.display()))?;
            Box::new(CompiledEvaluator::new(cfg.toolchain.clone(), Box::new(TemplateRenderer { template })))
        }
        EvaluatorSpec::Generation { interpreter, timeout_secs } => {
            let mut ev = GenerationEvaluator::default();
            if let Some(i) = interpreter {
                ev.interpreter = i.clone();
            }
            if let Some(t) = timeout_secs {
                ev.sandbox = SandboxPolicy::with_timeout(Duration::from_secs_f64(*t));
            }
            Box::new(ev)
        }
    })
}

fn prepare(cfg: &EffectiveConfig, problems: Vec<Problem>) -> Result<Vec<Prepared>> {
    problems
        .into_iter()
        .map(|mut problem| {
            if problem.task != cfg.mode {
                bail!("problem {} is a {:?} task but the run mode is {:?}", problem.id, problem.task, cfg.mode);
            }
            if cfg.parallel {
                problem.mode = ExecMode::Parallel;
            }
            let agents = cfg
                .agents
                .iter()
                .map(|s| Ok((s.name.clone(), build_agent(s, &problem.id)?)))
                .collect::<Result<_>>()?;
            let evaluator = build_evaluator(cfg, &problem.id)?;
            Ok(Prepared { problem, agents, evaluator })
        })
        .collect()
}

fn run_config(cfg: &EffectiveConfig, problem: &Problem, seed: u64) -> RunConfig {
    RunConfig {
        n_agents: cfg.agents.len(),
        rounds: cfg.rounds,
        selection: cfg.selection,
        mode: cfg.mode,
        ablation: cfg.ablation,
        rng_seed: seed,
        parallel_mode_hint: cfg.parallel || problem.mode == ExecMode::Parallel,
    }
}

fn write_outputs(dir: &Path, result: &RunResult) -> Result<()> {
    create_file(&dir.join("transcript.jsonl"), result.transcript_jsonl().as_bytes())?;
    create_file(&dir.join("bank.jsonl"), result.bank().to_jsonl().as_bytes())?;
    create_json(&dir.join("result.json"), result)
}

fn merged_fixture(rec: &RecordingAgent<&dyn Agent>) -> BTreeMap<String, FixtureEntry> {
    let mut all = rec.recorded();
    all.extend(rec.recorded_strict());
    all
}

/// Runs one problem and persists everything needed to replay it.
fn run_one(cfg: &EffectiveConfig, prepared: &Prepared, seed: u64, dir: &Path) -> Result<std::result::Result<(), String>> {
    let problem = &prepared.problem;
    create_json(&dir.join("problem.json"), problem)?;
    let agents: Vec<RecordingAgent<&dyn Agent>> =
        prepared.agents.iter().map(|(_, a)| RecordingAgent::new(&**a)).collect();
    let evaluator = RecordingEvaluator::new(&*prepared.evaluator);
    let outcome = run(problem, &agents, &run_config(cfg, problem, seed), &evaluator, &HashEmbedder::new(cfg.embedding_dim));
    for (j, a) in agents.iter().enumerate() {
        create_json(&dir.join(format!("fixtures/agent{j}.json")), &merged_fixture(a))?;
    }
    create_json(&dir.join("fixtures/eval.json"), &evaluator.recorded())?;
    match outcome {
        Ok(result) => {
            write_outputs(dir, &result)?;
            Ok(Ok(()))
        }
        Err(e) => {
            create_file(&dir.join("error.txt"), format!("{e}\n").as_bytes())?;
            Ok(Err(e.to_string()))
        }
    }
}

pub fn load_config(config: Option<&Path>, overrides: &Overrides) -> Result<EffectiveConfig> {
    let file = match config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    EffectiveConfig::resolve(file, overrides)
}

pub fn cmd_run(req: &RunRequest) -> Result<RunOutcome> {
    let cfg = load_config(req.config.as_deref(), &req.overrides)?;
    let problems = load_problem_set(&req.problems)?;
    if problems.is_empty() {
        bail!("no problems under {}", req.problems.display());
    }
    let prepared = prepare(&cfg, problems)?;

    let digest = cfg.digest();
    let root = req.output_root.clone().unwrap_or_else(rundir::run_root);
    let run_dir = rundir::create_run_dir(&root, &digest)?;
    let problem_ids: Vec<String> = prepared.iter().map(|p| p.problem.id.clone()).collect();
    let manifest = Manifest {
        schema_version: rundir::MANIFEST_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config_digest: digest,
        config: cfg.redacted(),
        seeds: (0..cfg.repeats).map(|r| cfg.repeat_seed(r)).collect(),
        artifacts: (0..cfg.repeats).flat_map(|r| problem_ids.iter().map(move |id| problem_rel(r, id))).collect(),
        problem_ids,
        started_at: rundir::now(),
    };
    create_json(&Manifest::path(&run_dir), &manifest)?;
    log::info!("run directory {}", run_dir.display());

    let mut failures = Vec::new();
    let mut completed = 0;
    for (r, &seed) in manifest.seeds.iter().enumerate() {
        for p in &prepared {
            let rel = problem_rel(r, &p.problem.id);
            match run_one(&cfg, p, seed, &run_dir.join(&rel))? {
                Ok(()) => completed += 1,
                Err(e) => failures.push(format!("{rel}: {e}")),
            }
        }
    }
    create_json(
        &Completion::path(&run_dir),
        &Completion { finished_at: rundir::now(), problems_completed: completed, problems_failed: failures.len() },
    )?;

    let report = if completed > 0 {
        let report = build_report(&run_dir)?;
        create_file(&run_dir.join("report.json"), format!("{}\n", report.to_json()?).as_bytes())?;
        create_file(&run_dir.join("report.csv"), report.to_csv()?.as_bytes())?;
        Some(report)
    } else {
        None
    };
    Ok(RunOutcome { run_dir, report, failures })
}

/// One run per ablation variant, each in its own run directory.
pub fn cmd_ablate(req: &RunRequest, variants: &[Ablation]) -> Result<Vec<(Ablation, RunOutcome)>> {
    variants
        .iter()
        .map(|&v| {
            let mut sub = req.clone();
            sub.overrides.ablation = Some(v);
            Ok((v, cmd_run(&sub)?))
        })
        .collect()
}

fn usage_by_model(cfg: &EffectiveConfig, result: &RunResult, into: &mut BTreeMap<String, AgentUsage>) {
    for rec in &result.usage {
        let model = cfg.agents.get(rec.agent_id).map_or_else(|| rec.name.clone(), |a| a.model.clone());
        *into.entry(model).or_default() += rec.usage;
    }
}

/// Aggregates the results under `run_dir`. The summary covers repeat 0;
/// usage, cost and FLOPS cover every repeat.
pub fn build_report(run_dir: &Path) -> Result<Report> {
    let manifest = Manifest::load(run_dir)?;
    let cfg = &manifest.config;
    let mut partial = !Completion::path(run_dir).exists();
    let mut usage = BTreeMap::new();
    let mut summaries: Vec<BenchmarkSummary> = Vec::new();
    for r in 0..cfg.repeats {
        let mut rows = Vec::new();
        for id in &manifest.problem_ids {
            let path = run_dir.join(problem_rel(r, id)).join("result.json");
            if !path.exists() {
                partial = true;
                continue;
            }
            let result: RunResult = read_json(&path)?;
            usage_by_model(cfg, &result, &mut usage);
            rows.push((id.clone(), result.best_eval().cloned()));
        }
        if !rows.is_empty() {
            summaries.push(summarize(&rows)?);
        }
    }
    if summaries.is_empty() {
        bail!("no results under {}", run_dir.display());
    }
    let pricing = match &cfg.pricing_path {
        Some(p) => load_pricing(p)?,
        None => parse_pricing(DEFAULT_PRICING_JSON)?,
    };
    let priced: BTreeMap<String, AgentUsage> =
        usage.iter().filter(|(m, _)| pricing.iter().any(|p| &p.model == *m)).map(|(m, u)| (m.clone(), *u)).collect();
    for m in usage.keys().filter(|m| !priced.contains_key(*m)) {
        log::info!("no pricing for model {m}; left out of the cost estimate");
    }
    let cost = if priced.is_empty() { None } else { Some(estimate_cost(&priced, &pricing)?) };
    let repeat_stats = if cfg.repeats > 1 { RepeatStats::from_summaries(&summaries) } else { None };
    Ok(Report {
        schema_version: REPORT_SCHEMA_VERSION,
        ablation: cfg.ablation.to_string(),
        config_digest: manifest.config_digest.clone(),
        seed: cfg.seed,
        partial,
        summary: summaries.swap_remove(0),
        flops: estimate_flops(&usage, &pricing),
        usage,
        cost,
        repeat_stats,
    })
}

pub fn cmd_report(run_dir: &Path, format: ReportFormat) -> Result<String> {
    let report = build_report(run_dir)?;
    Ok(match format {
        ReportFormat::Json => format!("{}\n", report.to_json()?),
        ReportFormat::Csv => report.to_csv()?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    /// `repeats/<r>/<problem id>`.
    pub location: String,
    /// 1-based transcript line, if both runs produced transcripts.
    pub line: Option<usize>,
    pub expected: String,
    pub actual: String,
}

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(n) => write!(f, "{} diverges at transcript line {n}\n  expected: {}\n  actual:   {}", self.location, self.expected, self.actual),
            None => write!(f, "{}: expected {}, got {}", self.location, self.expected, self.actual),
        }
    }
}

fn nth_line(text: &str, line: usize) -> String {
    text.lines().nth(line - 1).unwrap_or("<end of transcript>").to_string()
}

/// Re-executes every problem of a run from its captured fixtures and
/// compares transcripts byte for byte. Returns the divergences found.
pub fn cmd_replay(run_dir: &Path) -> Result<Vec<Divergence>> {
    let manifest = Manifest::load(run_dir)?;
    let cfg = &manifest.config;
    if cfg.digest() != manifest.config_digest {
        log::warn!("manifest config does not match its recorded digest");
    }
    let mut divergences = Vec::new();
    for (r, &seed) in manifest.seeds.iter().enumerate() {
        for id in &manifest.problem_ids {
            let rel = problem_rel(r, id);
            let dir = run_dir.join(&rel);
            if !dir.join("problem.json").exists() {
                continue;
            }
            let problem: Problem = read_json(&dir.join("problem.json"))?;
            let agents = cfg
                .agents
                .iter()
                .enumerate()
                .map(|(j, spec)| {
                    let path = dir.join(format!("fixtures/agent{j}.json"));
                    ScriptedAgent::from_file(&spec.name, &path).map_err(|e| anyhow!("{rel}: {e}"))
                })
                .collect::<Result<Vec<_>>>()?;
            let evaluator = ScriptedEvaluator::from_file(&dir.join("fixtures/eval.json")).map_err(|e| anyhow!("{rel}: {e}"))?;
            let replayed = run(&problem, &agents, &run_config(cfg, &problem, seed), &evaluator, &HashEmbedder::new(cfg.embedding_dim));

            let transcript = dir.join("transcript.jsonl");
            let expected = if transcript.exists() {
                Some(std::fs::read_to_string(&transcript).with_context(|| format!("reading {}", transcript.display()))?)
            } else {
                None
            };
            match (expected, replayed) {
                (Some(want), Ok(got)) => {
                    let got = got.transcript_jsonl();
                    if want.as_bytes() != got.as_bytes() {
                        let line = first_divergence(&want, &got).unwrap_or(1);
                        divergences.push(Divergence {
                            location: rel,
                            line: Some(line),
                            expected: nth_line(&want, line),
                            actual: nth_line(&got, line),
                        });
                    }
                }
                (Some(_), Err(e)) => divergences.push(Divergence {
                    location: rel,
                    line: None,
                    expected: "a completed run".into(),
                    actual: format!("failure: {e}"),
                }),
                (None, Ok(_)) => divergences.push(Divergence {
                    location: rel,
                    line: None,
                    expected: "a failed run".into(),
                    actual: "a completed run".into(),
                }),
                (None, Err(_)) => {}
            }
        }
    }
    Ok(divergences)
}
