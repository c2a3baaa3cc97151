#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Mutex;

use lesson_loop_core::agent::{Agent, AgentError, AgentRequest, CompletionReply, PromptClass, ScriptedAgent};
use lesson_loop_core::eval::{EvalResult, ScriptedEvaluator};
use lesson_loop_core::lesson::HashEmbedder;
use lesson_loop_core::{run, Problem, RunConfig, RunResult};

pub const SOLICIT: [PromptClass; 4] =
    [PromptClass::SolicitA, PromptClass::SolicitB, PromptClass::SolicitC, PromptClass::SolicitD];

pub fn fenced(code: &str) -> String {
    format!("Here is the rewrite.\n```C++\n{code}\n```\nDone.")
}

pub fn candidate_code(round: usize, agent: usize) -> String {
    format!("int f() {{ return {round}{agent}; }} // r{round} a{agent}")
}

/// A scripted agent with an improve reply and a lesson for every
/// solicitation class in each of `rounds + 1` rounds.
pub fn scripted_agent(agent: usize, rounds: usize) -> ScriptedAgent {
    let mut a = ScriptedAgent::new(format!("agent{agent}"), BTreeMap::new());
    for r in 0..=rounds {
        let class = if r == 0 { PromptClass::Initial } else { PromptClass::Improve };
        a = a.reply(class, r, agent, fenced(&candidate_code(r, agent)));
        for s in SOLICIT {
            a = a.reply(s, r, agent, format!("Lesson from agent {agent} in round {r} ({s})."));
        }
    }
    a
}

/// Verdicts from `verdict(round, agent)` for every position.
pub fn scripted_evaluator(n: usize, rounds: usize, verdict: impl Fn(usize, usize) -> EvalResult) -> ScriptedEvaluator {
    let mut ev = ScriptedEvaluator::default();
    for r in 0..=rounds {
        for j in 0..n {
            ev = ev.at(r, j, verdict(r, j));
        }
    }
    ev
}

/// Speedups that vary deterministically across rounds and agents, with some
/// failures mixed in.
pub fn mixed_verdict(round: usize, agent: usize) -> EvalResult {
    match (round * 7 + agent * 3) % 6 {
        0 => EvalResult::timed(1.0 + 0.4 * (round + agent) as f64, 5),
        1 => EvalResult::timed(0.8, 5),
        2 => EvalResult::incorrect(2, 5),
        3 => EvalResult::compile_error(format!("error: r{round} a{agent}")),
        4 => EvalResult::timed(1.05, 5),
        _ => EvalResult::timed(2.5 + 0.1 * round as f64, 5),
    }
}

pub fn baseline_problem() -> Problem {
    Problem::optimize("toy", "int f() { int s = 0; for (int i = 0; i < 10; ++i) s += i; return s; }")
}

pub fn scripted_run(n: usize, rounds: usize, config: RunConfig) -> RunResult {
    let agents: Vec<ScriptedAgent> = (0..n).map(|j| scripted_agent(j, rounds)).collect();
    let ev = scripted_evaluator(n, rounds, mixed_verdict);
    let config = RunConfig { n_agents: n, rounds, ..config };
    run(&baseline_problem(), &agents, &config, &ev, &HashEmbedder::new(128)).expect("scripted run")
}

/// Wraps an agent and keeps every prompt it receives.
pub struct Capture<A> {
    pub inner: A,
    pub prompts: Mutex<Vec<(PromptClass, usize, usize, String)>>,
}

impl<A> Capture<A> {
    pub fn new(inner: A) -> Self {
        Self { inner, prompts: Mutex::new(Vec::new()) }
    }

    pub fn prompts_of(&self, class: PromptClass) -> Vec<(usize, String)> {
        let mut v: Vec<_> = self
            .prompts
            .lock()
            .unwrap()
            .iter()
            .filter(|p| p.0 == class)
            .map(|p| (p.1, p.3.clone()))
            .collect();
        v.sort();
        v
    }
}

impl<A: Agent> Agent for Capture<A> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, req: &AgentRequest<'_>) -> Result<CompletionReply, AgentError> {
        self.prompts.lock().unwrap().push((req.class, req.round, req.agent_id, req.prompt.to_string()));
        self.inner.complete(req)
    }
}
