mod common;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use common::*;
use lesson_loop_core::agent::{PromptClass, ScriptedAgent};
use lesson_loop_core::eval::{EvalResult, ScriptedEvaluator};
use lesson_loop_core::lesson::{EmbedError, Embedder, FallbackEmbedder, HashEmbedder};
use lesson_loop_core::orchestrator::Phase;
use lesson_loop_core::problem::TestCase;
use lesson_loop_core::prompt::{initial_prompt, PromptContext};
use lesson_loop_core::{run, Ablation, Best, LessonKind, Problem, RunConfig, RunError, SelectionConfig, TaskKind};

#[test]
fn two_agents_one_round_fill_the_bank() {
    let agents: Vec<_> = (0..2).map(|j| scripted_agent(j, 1)).collect();
    let ev = scripted_evaluator(2, 1, |r, j| EvalResult::timed(1.2 + r as f64 + 0.5 * j as f64, 3));
    let cfg = RunConfig { n_agents: 2, rounds: 1, ..RunConfig::default() };
    let res = run(&baseline_problem(), &agents, &cfg, &ev, &HashEmbedder::new(64)).unwrap();
    assert_eq!(res.bank_snapshot.len(), 4);
    assert_eq!(res.all_candidates.len(), 4);
    let best = res.best_candidate().unwrap();
    assert_eq!((best.round_index, best.agent_id), (1, 1));
    assert!((res.best_clamped_speedup() - 2.7).abs() < 1e-12);
    for c in &res.all_candidates {
        assert!(res.best_clamped_speedup() >= lesson_loop_core::eval::clamped_speedup(&c.eval));
    }
}

#[test]
fn zero_rounds_runs_only_the_initial_round() {
    let res = scripted_run(3, 0, RunConfig::default());
    assert_eq!(res.rounds_completed, 0);
    assert!(res.selections_per_round.is_empty());
    assert!(res.all_candidates.iter().all(|c| c.round_index == 0));
    assert_eq!(res.bank_snapshot.len(), 3);
    assert!(res.transcript.iter().all(|e| e.phase != Phase::Select && e.phase != Phase::Adjust));
}

#[test]
fn rounds_follow_the_phase_order() {
    let n = 3;
    let res = scripted_run(n, 4, RunConfig::default());
    for t in 1..=4 {
        let phases: Vec<Phase> = res.transcript.iter().filter(|e| e.round == t).map(|e| e.phase).collect();
        let mut expected = vec![Phase::Select];
        for p in [Phase::Improve, Phase::Evaluate, Phase::Solicit, Phase::Deposit] {
            expected.extend(std::iter::repeat_n(p, n));
        }
        expected.push(Phase::Adjust);
        if t == 4 {
            expected.push(Phase::Finish);
        }
        assert_eq!(phases, expected, "round {t}");
    }
    let ts: Vec<u64> = res.transcript.iter().map(|e| e.ts).collect();
    assert_eq!(ts, (0..ts.len() as u64).collect::<Vec<_>>());
}

#[test]
fn scripted_runs_are_byte_identical() {
    let a = scripted_run(3, 4, RunConfig::default());
    let b = scripted_run(3, 4, RunConfig::default());
    assert_eq!(a.transcript_jsonl(), b.transcript_jsonl());
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn lesson_scores_follow_verdicts() {
    let res = scripted_run(3, 2, RunConfig::default());
    for l in &res.bank_snapshot {
        let c = res
            .all_candidates
            .iter()
            .find(|c| c.round_index == l.round_index && c.agent_id == l.agent_id)
            .unwrap();
        assert_eq!(l.score, c.score());
        let expect = match c.eval.status {
            lesson_loop_core::EvalStatus::Faster => LessonKind::Speedup,
            lesson_loop_core::EvalStatus::Slower => LessonKind::Slowdown,
            lesson_loop_core::EvalStatus::CompileError => LessonKind::CompileError,
            _ => LessonKind::Incorrect,
        };
        assert_eq!(l.kind, expect);
    }
}

#[test]
fn failing_agent_is_skipped_and_recorded() {
    let mut agents: Vec<_> = (0..2).map(|j| scripted_agent(j, 2)).collect();
    // agent 1 has nothing to say after the initial round
    agents[1] = ScriptedAgent::new("mute", BTreeMap::new())
        .reply(PromptClass::Initial, 0, 1, fenced("int g();"))
        .reply(PromptClass::SolicitA, 0, 1, "fine");
    let ev = scripted_evaluator(2, 2, |_, _| EvalResult::timed(1.5, 1));
    let cfg = RunConfig { n_agents: 2, rounds: 2, ..RunConfig::default() };
    let res = run(&baseline_problem(), &agents, &cfg, &ev, &HashEmbedder::new(64)).unwrap();
    assert_eq!(res.bank_snapshot.len(), 2 + 1 + 1);
    let errors: Vec<_> = res.transcript.iter().filter(|e| e.phase == Phase::AgentError).collect();
    assert_eq!(errors.len(), 2);
    assert!(errors.iter().all(|e| e.agent == Some(1) && e.note.as_deref().unwrap().starts_with("improve")));
}

#[test]
fn all_agents_failing_initially_is_an_error() {
    let agents = vec![ScriptedAgent::new("a", BTreeMap::new()), ScriptedAgent::new("b", BTreeMap::new())];
    let cfg = RunConfig { n_agents: 2, rounds: 1, ..RunConfig::default() };
    let err = run(&baseline_problem(), &agents, &cfg, &ScriptedEvaluator::default(), &HashEmbedder::new(8)).unwrap_err();
    match err {
        RunError::AllAgentsFailed { diagnostics } => assert_eq!(diagnostics.len(), 2),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn reply_without_code_block_is_an_agent_failure() {
    let agents = vec![
        ScriptedAgent::new("a", BTreeMap::new()).reply(PromptClass::Initial, 0, 0, "I cannot help."),
        scripted_agent(1, 0),
    ];
    let ev = scripted_evaluator(2, 0, |_, _| EvalResult::timed(1.3, 1));
    let cfg = RunConfig { n_agents: 2, rounds: 0, ..RunConfig::default() };
    let res = run(&baseline_problem(), &agents, &cfg, &ev, &HashEmbedder::new(8)).unwrap();
    assert_eq!(res.all_candidates.len(), 1);
    let err = res.transcript.iter().find(|e| e.phase == Phase::AgentError).unwrap();
    assert!(err.note.as_deref().unwrap().starts_with("extract"));
}

#[test]
fn config_mismatches_are_rejected() {
    let agents = vec![scripted_agent(0, 0)];
    let ev = ScriptedEvaluator::default();
    let e = HashEmbedder::new(8);
    let cfg = RunConfig { n_agents: 2, rounds: 0, ..RunConfig::default() };
    assert!(matches!(run(&baseline_problem(), &agents, &cfg, &ev, &e), Err(RunError::Config(_))));
    let cfg = RunConfig { n_agents: 1, rounds: 0, mode: TaskKind::Generate, ..RunConfig::default() };
    assert!(matches!(run(&baseline_problem(), &agents, &cfg, &ev, &e), Err(RunError::Config(_))));
}

#[test]
fn improve_prompts_carry_only_the_original_source() {
    let n = 3;
    let rounds = 3;
    let agents: Vec<_> = (0..n).map(|j| Capture::new(scripted_agent(j, rounds))).collect();
    let ev = scripted_evaluator(n, rounds, mixed_verdict);
    let problem = baseline_problem();
    let cfg = RunConfig { n_agents: n, rounds, ..RunConfig::default() };
    run(&problem, &agents, &cfg, &ev, &HashEmbedder::new(64)).unwrap();
    for (j, a) in agents.iter().enumerate() {
        let improve = a.prompts_of(PromptClass::Improve);
        assert_eq!(improve.len(), rounds);
        for (_, p) in improve {
            assert!(p.contains(&problem.baseline_source));
            assert!(p.contains("While you rewrite the code, consider the following lessons"));
            for r in 0..=rounds {
                for k in 0..n {
                    assert!(!p.contains(&candidate_code(r, k)), "agent {j} saw candidate r{r} a{k}");
                }
            }
        }
    }
}

#[test]
fn no_lessons_prompts_equal_the_initial_prompt() {
    let n = 2;
    let agents: Vec<_> = (0..n).map(|j| Capture::new(scripted_agent(j, 3))).collect();
    let ev = scripted_evaluator(n, 3, mixed_verdict);
    let problem = baseline_problem();
    let cfg = RunConfig { n_agents: n, rounds: 3, ablation: Ablation::NoLessons, ..RunConfig::default() };
    let res = run(&problem, &agents, &cfg, &ev, &HashEmbedder::new(64)).unwrap();
    let initial = initial_prompt(&PromptContext::new(TaskKind::Optimize, "C++", false, 1.1), &problem.baseline_source);
    for a in &agents {
        for (_, p) in a.prompts_of(PromptClass::Improve).into_iter().chain(a.prompts_of(PromptClass::Initial)) {
            assert_eq!(p, initial);
        }
    }
    assert!(res.selections_per_round.iter().all(|s| s.selection.is_empty()));
}

#[test]
fn no_adjustment_keeps_factors_at_one() {
    let res = scripted_run(3, 4, RunConfig { ablation: Ablation::NoAdjustment, ..RunConfig::default() });
    assert_eq!(res.bank_snapshot.len(), 15);
    assert!(res.bank_snapshot.iter().all(|l| l.factor == 1.0));
    let full = scripted_run(3, 4, RunConfig::default());
    assert!(full.bank_snapshot.iter().any(|l| l.factor != 1.0));
}

#[test]
fn random_k_runs_repeat_exactly() {
    let cfg = RunConfig { ablation: Ablation::RandomK, rng_seed: 99, ..RunConfig::default() };
    let a = scripted_run(3, 4, cfg.clone());
    let b = scripted_run(3, 4, cfg);
    assert_eq!(a.selections_per_round, b.selections_per_round);
    assert!(a.selections_per_round.iter().skip(1).all(|s| s.selection.len() == 4));
}

#[test]
fn parallel_hint_reaches_the_prompt() {
    let agents = vec![Capture::new(scripted_agent(0, 0))];
    let ev = scripted_evaluator(1, 0, |_, _| EvalResult::timed(2.0, 1));
    let cfg = RunConfig { n_agents: 1, rounds: 0, parallel_mode_hint: true, ..RunConfig::default() };
    run(&baseline_problem(), &agents, &cfg, &ev, &HashEmbedder::new(8)).unwrap();
    let (_, p) = &agents[0].prompts_of(PromptClass::Initial)[0];
    assert!(p.contains("You should use OpenMP to parallelize the code."));
}

#[test]
fn faster_candidate_solicits_with_measured_speedup() {
    let agents = vec![Capture::new(scripted_agent(0, 0))];
    let ev = scripted_evaluator(1, 0, |_, _| EvalResult::timed(1.71, 1));
    let cfg = RunConfig { n_agents: 1, rounds: 0, ..RunConfig::default() };
    let res = run(&baseline_problem(), &agents, &cfg, &ev, &HashEmbedder::new(8)).unwrap();
    let (_, p) = &agents[0].prompts_of(PromptClass::SolicitA)[0];
    assert!(p.contains("faster") && p.contains("1.71x"));
    assert_eq!(res.bank_snapshot[0].kind, LessonKind::Speedup);
    assert_eq!(res.bank_snapshot[0].score, 1.71);
}

#[test]
fn generation_stops_once_all_tests_pass() {
    let sig = "def add(a, b):\n    \"\"\"Return a + b\"\"\"";
    let tests = vec![TestCase { name: None, code: "assert add(1, 2) == 3".into() }];
    let problem = Problem::generate("add", sig, tests);
    let agents: Vec<_> = (0..2)
        .map(|j| {
            Capture::new(
                ScriptedAgent::new(format!("g{j}"), BTreeMap::new())
                    .reply(PromptClass::Initial, 0, j, "```Python\ndef add(a, b):\n    return a + b\n```"),
            )
        })
        .collect();
    let ev = ScriptedEvaluator::default().at(0, 0, EvalResult::tested(1, 1)).at(0, 1, EvalResult::tested(0, 1));
    let cfg = RunConfig {
        n_agents: 2,
        rounds: 4,
        mode: TaskKind::Generate,
        selection: SelectionConfig::generate_defaults(),
        ..RunConfig::default()
    };
    let res = run(&problem, &agents, &cfg, &ev, &HashEmbedder::new(8)).unwrap();
    assert_eq!(res.early_stop, Some(0));
    assert!(res.selections_per_round.is_empty());
    assert!(res.bank_snapshot.is_empty());
    assert_eq!(res.best, Best::Candidate { index: 0 });
    assert!(res.transcript.iter().any(|e| e.phase == Phase::EarlyStop));
    assert!(agents.iter().all(|a| a.prompts_of(PromptClass::SolicitC).is_empty()));
}

#[test]
fn generation_rounds_use_test_failure_lessons() {
    let sig = "def add(a, b):\n    \"\"\"Return a + b\"\"\"";
    let tests = (0..6).map(|i| TestCase { name: None, code: format!("assert add({i}, 1) == {}", i + 1) }).collect();
    let problem = Problem::generate("add", sig, tests);
    let agent = Capture::new(
        ScriptedAgent::new("g", BTreeMap::new())
            .reply(PromptClass::Initial, 0, 0, "```Python\ndef add(a, b):\n    return a - b\n```")
            .reply(PromptClass::SolicitC, 0, 0, "It subtracts instead of adding.")
            .reply(PromptClass::Improve, 1, 0, "```Python\ndef add(a, b):\n    return a + b\n```"),
    );
    let ev = ScriptedEvaluator::default().at(0, 0, EvalResult::tested(4, 6)).at(1, 0, EvalResult::tested(6, 6));
    let cfg = RunConfig {
        n_agents: 1,
        rounds: 3,
        mode: TaskKind::Generate,
        selection: SelectionConfig::generate_defaults(),
        ..RunConfig::default()
    };
    let res = run(&problem, std::slice::from_ref(&agent), &cfg, &ev, &HashEmbedder::new(8)).unwrap();
    assert_eq!(res.early_stop, Some(1));
    let (_, solicit) = &agent.prompts_of(PromptClass::SolicitC)[0];
    assert!(solicit.contains("passes only 4 test cases out of 6, leaving 2 failed"));
    let (_, improve) = &agent.prompts_of(PromptClass::Improve)[0];
    assert!(improve.contains("Lesson 1 reasons why the code does not pass all test cases. It subtracts instead of adding."));
    assert_eq!(res.bank_snapshot[0].kind, LessonKind::TestFailure);
    assert!((res.bank_snapshot[0].score - 4.0 / 6.0).abs() < 1e-12);
    assert_eq!(res.best_candidate().unwrap().round_index, 1);
}

/// Works for the first `ok` calls, then fails.
struct Flaky {
    ok: usize,
    calls: AtomicUsize,
    inner: HashEmbedder,
}

impl Embedder<f64> for Flaky {
    fn dim(&self) -> usize {
        Embedder::<f64>::dim(&self.inner)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) < self.ok {
            // a different vector space from the fallback
            Ok(self.inner.embed_text(&text.to_uppercase().chars().rev().collect::<String>()))
        } else {
            Err(EmbedError::Backend("service unavailable".into()))
        }
    }
}

#[test]
fn embedder_failure_degrades_to_hashing() {
    let primary = Flaky { ok: 5, calls: AtomicUsize::new(0), inner: HashEmbedder::new(64) };
    let embedder = FallbackEmbedder::new(primary);
    let n = 3;
    let agents: Vec<_> = (0..n).map(|j| scripted_agent(j, 3)).collect();
    let ev = scripted_evaluator(n, 3, mixed_verdict);
    let cfg = RunConfig { n_agents: n, rounds: 3, ..RunConfig::default() };
    let res = run(&baseline_problem(), &agents, &cfg, &ev, &embedder).unwrap();
    assert!(res.embedder_degraded);
    assert_eq!(res.transcript.iter().filter(|e| e.phase == Phase::EmbedderDegraded).count(), 1);
    assert_eq!(res.bank_snapshot.len(), 12);
}
