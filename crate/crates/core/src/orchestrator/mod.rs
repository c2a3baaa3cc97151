//! The round loop: initial round, then select, improve, evaluate, solicit,
//! deposit and adjust for each improvement round.

mod ablation;
mod best;
mod transcript;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{extract_code_block, Agent, AgentError, AgentRequest, AgentUsage, CompletionReply, PromptClass};
use crate::eval::{evaluate_all, EvalError, EvalRequest, EvalResult, EvalStatus, Evaluator};
use crate::lesson::{adjust_factors, BankError, EmbedError, Embedder, Lesson, LessonBank, LessonKind, Selection, SelectionConfig};
use crate::problem::{Problem, TaskKind};
use crate::prompt::{assemble_improve_prompt, solicitation_prompt, PromptContext};

pub use ablation::{apply_ablation, Ablation};
pub use best::{best_solution, Best};
pub use transcript::{
    digest, first_divergence, read_transcript, transcript_to_jsonl, write_transcript, Phase, TranscriptEvent,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n_agents: usize,
    pub rounds: usize,
    pub selection: SelectionConfig<f64>,
    pub mode: TaskKind,
    pub ablation: Ablation,
    pub rng_seed: u64,
    /// Ask for parallel code in optimization prompts.
    pub parallel_mode_hint: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_agents: 3,
            rounds: 4,
            selection: SelectionConfig::optimize_defaults(),
            mode: TaskKind::Optimize,
            ablation: Ablation::Full,
            rng_seed: 0,
            parallel_mode_hint: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        if self.n_agents == 0 {
            return Err(RunError::Config("n_agents must be at least 1".into()));
        }
        self.selection.validate().map_err(|e| RunError::Config(e.to_string()))
    }
}

/// One graded rewrite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub agent_id: usize,
    pub round_index: usize,
    pub source: String,
    pub eval: EvalResult,
    /// Raw speedup for timed optimization results, pass fraction for
    /// generation, absent otherwise.
    pub speedup: Option<f64>,
}

impl Candidate {
    fn new(task: TaskKind, agent_id: usize, round_index: usize, source: String, eval: EvalResult) -> Self {
        let speedup = match task {
            TaskKind::Optimize => eval.speedup_raw.filter(|_| eval.status.is_timed()),
            TaskKind::Generate => Some(eval.pass_fraction()),
        };
        Self { agent_id, round_index, source, eval, speedup }
    }

    /// The round score `s_j`; untimed outcomes score 0.
    pub fn score(&self) -> f64 {
        self.speedup.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSelection {
    pub round: usize,
    pub selection: Selection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentUsageRecord {
    pub agent_id: usize,
    pub name: String,
    pub usage: AgentUsage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub problem_id: String,
    pub best: Best,
    pub all_candidates: Vec<Candidate>,
    pub bank_snapshot: Vec<Lesson<f64>>,
    pub selections_per_round: Vec<RoundSelection>,
    pub usage: Vec<AgentUsageRecord>,
    pub transcript: Vec<TranscriptEvent>,
    pub embedder_degraded: bool,
    /// Round after which a generation run stopped because a candidate
    /// passed every test.
    pub early_stop: Option<usize>,
    pub rounds_completed: usize,
}

impl RunResult {
    pub fn best_candidate(&self) -> Option<&Candidate> {
        match self.best {
            Best::Candidate { index } => self.all_candidates.get(index),
            Best::KeepOriginal => None,
        }
    }

    /// Result used for benchmark aggregation; `None` if the original is kept.
    pub fn best_eval(&self) -> Option<&EvalResult> {
        self.best_candidate().map(|c| &c.eval)
    }

    pub fn best_clamped_speedup(&self) -> f64 {
        self.best_eval().map_or(1.0, crate::eval::clamped_speedup)
    }

    pub fn bank(&self) -> LessonBank<f64> {
        let mut bank = LessonBank::new();
        for l in &self.bank_snapshot {
            bank.restore(l.clone()).expect("snapshot is a valid bank");
        }
        bank
    }

    pub fn transcript_jsonl(&self) -> String {
        transcript_to_jsonl(&self.transcript)
    }

    pub fn total_usage(&self) -> AgentUsage {
        self.usage.iter().map(|u| u.usage).sum()
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("run configuration: {0}")]
    Config(String),
    #[error("every agent failed in the initial round: {}", diagnostics.join("; "))]
    AllAgentsFailed { diagnostics: Vec<String> },
    #[error("evaluation of round {round} agent {agent}: {source}")]
    Eval { round: usize, agent: usize, source: EvalError },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Bank(#[from] BankError),
}

pub fn lesson_kind(task: TaskKind, status: EvalStatus) -> LessonKind {
    match (task, status) {
        (TaskKind::Generate, _) => LessonKind::TestFailure,
        (_, EvalStatus::Faster | EvalStatus::Passed) => LessonKind::Speedup,
        (_, EvalStatus::Slower) => LessonKind::Slowdown,
        (_, EvalStatus::Incorrect | EvalStatus::Timeout | EvalStatus::Crash) => LessonKind::Incorrect,
        (_, EvalStatus::CompileError) => LessonKind::CompileError,
    }
}

/// Calls `f` for every agent concurrently and returns results in agent order.
fn for_each_agent<A, T, F>(agents: &[(usize, &A)], f: F) -> Vec<T>
where
    A: Agent,
    T: Send,
    F: Fn(usize, &A) -> T + Sync,
{
    if agents.len() <= 1 {
        return agents.iter().map(|&(j, a)| f(j, a)).collect();
    }
    std::thread::scope(|scope| {
        let f = &f;
        let handles: Vec<_> = agents.iter().map(|&(j, a)| scope.spawn(move || f(j, a))).collect();
        handles.into_iter().map(|h| h.join().expect("agent thread panicked")).collect()
    })
}

struct RunState<'p> {
    problem: &'p Problem,
    config: &'p RunConfig,
    ctx: PromptContext,
    seed: u64,
    bank: LessonBank<f64>,
    candidates: Vec<Candidate>,
    selections: Vec<RoundSelection>,
    usage: Vec<AgentUsage>,
    transcript: Vec<TranscriptEvent>,
    embedder_degraded: bool,
}

impl RunState<'_> {
    fn record(&mut self, phase: Phase, round: usize, agent: Option<usize>, parts: &[&[u8]], note: Option<String>) {
        let ts = self.transcript.len() as u64;
        self.transcript.push(TranscriptEvent { ts, phase, round, agent, payload_digest: digest(parts), note });
    }

    fn agent_error(&mut self, round: usize, agent: usize, what: &str, err: &dyn std::fmt::Display) {
        let note = format!("{what}: {err}");
        log::warn!("{} round {round} agent {agent}: {note}", self.problem.id);
        self.record(Phase::AgentError, round, Some(agent), &[note.as_bytes()], Some(note.clone()));
    }

    fn accept_reply(
        &mut self,
        phase: Phase,
        round: usize,
        agent: usize,
        prompt: &str,
        reply: Result<CompletionReply, AgentError>,
    ) -> Option<String> {
        match reply {
            Ok(r) => {
                self.usage[agent] += r.usage_delta;
                self.record(phase, round, Some(agent), &[prompt.as_bytes(), r.text.as_bytes()], None);
                Some(r.text)
            }
            Err(e) => {
                let what = if phase == Phase::Improve { "improve" } else { "solicit" };
                self.agent_error(round, agent, what, &e);
                None
            }
        }
    }

    fn select<E: Embedder<f64> + ?Sized>(&mut self, round: usize, embedder: &E) -> Result<Selection, RunError> {
        let query = &self.problem.baseline_source;
        let degraded_before = embedder.degraded();
        self.bank.ensure_embeddings(embedder)?;
        let mut selection = apply_ablation(self.config, &self.bank, query, embedder, round)?;
        if !degraded_before && embedder.degraded() {
            // cached vectors came from the primary embedder; recompute them all
            self.embedder_degraded = true;
            self.bank.clear_embeddings();
            self.bank.ensure_embeddings(embedder)?;
            selection = apply_ablation(self.config, &self.bank, query, embedder, round)?;
            self.record(Phase::EmbedderDegraded, round, None, &[b"fallback"], Some("embedder fell back to hashing".into()));
        }
        let payload = serde_json::to_vec(&selection).expect("selection serializes");
        self.record(Phase::Select, round, None, &[&payload], None);
        self.selections.push(RoundSelection { round, selection: selection.clone() });
        Ok(selection)
    }

    /// Improve and evaluate; returns this round's candidates in agent order.
    fn produce<A: Agent, V: Evaluator + ?Sized>(
        &mut self,
        round: usize,
        agents: &[(usize, &A)],
        prompt: &str,
        evaluator: &V,
    ) -> Result<Vec<Candidate>, RunError> {
        let class = if round == 0 { PromptClass::Initial } else { PromptClass::Improve };
        let replies = for_each_agent(agents, |j, a| {
            a.complete(&AgentRequest { class, round, agent_id: j, prompt })
        });
        let fence = self.problem.language().to_string();
        let mut sources = Vec::new();
        for (&(j, _), reply) in agents.iter().zip(replies) {
            let Some(text) = self.accept_reply(Phase::Improve, round, j, prompt, reply) else { continue };
            match extract_code_block(&text, &fence) {
                Ok(code) => sources.push((j, code)),
                Err(e) => self.agent_error(round, j, "extract", &e),
            }
        }
        let requests: Vec<EvalRequest<'_>> = sources
            .iter()
            .map(|(j, code)| EvalRequest { problem: self.problem, source: code, seed: self.seed, round, agent_id: *j })
            .collect();
        let verdicts = evaluate_all(evaluator, &requests);
        let mut out = Vec::with_capacity(sources.len());
        for ((j, code), verdict) in sources.into_iter().zip(verdicts) {
            let eval = verdict.map_err(|source| RunError::Eval { round, agent: j, source })?;
            let payload = serde_json::to_vec(&eval).expect("eval serializes");
            self.record(Phase::Evaluate, round, Some(j), &[code.as_bytes(), &payload], None);
            out.push(Candidate::new(self.config.mode, j, round, code, eval));
        }
        Ok(out)
    }

    /// Solicit one lesson per candidate and deposit them in agent order.
    fn solicit_and_deposit<A: Agent>(&mut self, round: usize, agents: &[(usize, &A)], cands: &[Candidate]) -> Result<(), RunError> {
        let original = self.problem.baseline_source.as_str();
        let task = self.config.mode;
        let jobs: Vec<(usize, &A, &Candidate, PromptClass, String)> = cands
            .iter()
            .filter_map(|c| {
                let agent = agents.iter().find(|(j, _)| *j == c.agent_id)?.1;
                let (class, text) = solicitation_prompt(task, original, &c.source, &c.eval)?;
                Some((c.agent_id, agent, c, class, text))
            })
            .collect();
        let calls: Vec<(usize, &A)> = jobs.iter().map(|(j, a, ..)| (*j, *a)).collect();
        let replies = for_each_agent(&calls, |j, a| {
            let (_, _, _, class, text) = jobs.iter().find(|job| job.0 == j).expect("job for agent");
            a.complete(&AgentRequest { class: *class, round, agent_id: j, prompt: text })
        });
        let mut lessons = Vec::new();
        for ((j, _, cand, _, prompt), reply) in jobs.iter().zip(replies) {
            if let Some(text) = self.accept_reply(Phase::Solicit, round, *j, prompt, reply) {
                lessons.push((*j, *cand, text));
            }
        }
        for (j, cand, text) in lessons {
            let kind = lesson_kind(task, cand.eval.status);
            let lesson = Lesson::new(self.bank.next_id(), j, round, kind, cand.score(), text.trim());
            let payload = serde_json::to_vec(&lesson).expect("lesson serializes");
            self.bank.deposit(lesson)?;
            self.record(Phase::Deposit, round, Some(j), &[&payload], None);
        }
        Ok(())
    }

    fn adjust(&mut self, round: usize, selection: &Selection, cands: &[Candidate]) {
        let ids = selection.ids();
        if self.config.ablation != Ablation::NoAdjustment {
            let scores: Vec<f64> = cands.iter().map(Candidate::score).collect();
            adjust_factors(&mut self.bank, &ids, &scores, self.config.selection.epsilon);
        }
        let factors: Vec<(u64, f64)> = ids
            .iter()
            .filter_map(|id| self.bank.get(*id).map(|l| (id.0, l.factor)))
            .collect();
        let payload = serde_json::to_vec(&factors).expect("factors serialize");
        self.record(Phase::Adjust, round, None, &[&payload], None);
    }
}

/// Runs the full loop on one problem. `agents[j]` is agent `j`.
pub fn run<A, V, E>(
    problem: &Problem,
    agents: &[A],
    config: &RunConfig,
    evaluator: &V,
    embedder: &E,
) -> Result<RunResult, RunError>
where
    A: Agent,
    V: Evaluator + ?Sized,
    E: Embedder<f64> + ?Sized,
{
    config.validate()?;
    if agents.len() != config.n_agents {
        return Err(RunError::Config(format!(
            "n_agents is {} but {} agents were supplied",
            config.n_agents,
            agents.len()
        )));
    }
    if problem.task != config.mode {
        return Err(RunError::Config(format!("problem `{}` does not match the run mode", problem.id)));
    }
    problem.validate().map_err(RunError::Config)?;
    let all: Vec<(usize, &A)> = agents.iter().enumerate().collect();
    let ctx = PromptContext::new(
        config.mode,
        problem.language(),
        config.parallel_mode_hint,
        config.selection.threshold,
    );
    let mut st = RunState {
        problem,
        config,
        ctx,
        seed: problem.seed.unwrap_or(config.rng_seed),
        bank: LessonBank::new(),
        candidates: Vec::new(),
        selections: Vec::new(),
        usage: vec![AgentUsage::default(); agents.len()],
        transcript: Vec::new(),
        embedder_degraded: false,
    };
    let original = problem.baseline_source.as_str();
    let mut early_stop = None;
    let mut rounds_completed = 0;

    for round in 0..=config.rounds {
        let selection = if round == 0 { None } else { Some(st.select(round, embedder)?) };
        let prompt = {
            let chosen: Vec<&Lesson<f64>> = selection
                .as_ref()
                .map(|s| s.ids().iter().filter_map(|id| st.bank.get(*id)).collect())
                .unwrap_or_default();
            assemble_improve_prompt(original, &chosen, &st.ctx)
        };
        let cands = st.produce(round, &all, &prompt, evaluator)?;
        if round == 0 && cands.is_empty() {
            let diagnostics = st.transcript.iter().filter_map(|e| e.note.clone()).collect();
            return Err(RunError::AllAgentsFailed { diagnostics });
        }
        st.candidates.extend(cands.iter().cloned());
        if config.mode == TaskKind::Generate && cands.iter().any(|c| c.eval.status == EvalStatus::Passed) {
            st.record(Phase::EarlyStop, round, None, &[b"passed"], None);
            early_stop = Some(round);
            rounds_completed = round;
            break;
        }
        st.solicit_and_deposit(round, &all, &cands)?;
        if let Some(sel) = &selection {
            st.adjust(round, sel, &cands);
        }
        rounds_completed = round;
        log::info!("{}: round {round} done, bank holds {} lessons", problem.id, st.bank.len());
    }

    let best = best_solution(&st.candidates, config.mode);
    let best_payload = serde_json::to_vec(&best).expect("best serializes");
    st.record(Phase::Finish, rounds_completed, None, &[&best_payload], None);
    Ok(RunResult {
        problem_id: problem.id.clone(),
        best,
        all_candidates: st.candidates,
        bank_snapshot: st.bank.lessons().to_vec(),
        selections_per_round: st.selections,
        usage: agents
            .iter()
            .zip(st.usage)
            .enumerate()
            .map(|(agent_id, (a, usage))| AgentUsageRecord { agent_id, name: a.name().to_string(), usage })
            .collect(),
        transcript: st.transcript,
        embedder_degraded: st.embedder_degraded,
        early_stop,
        rounds_completed,
    })
}
