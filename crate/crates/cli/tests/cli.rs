use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lesson_loop_core::agent::stub_server::StubServer;
use lesson_loop_core::agent::{fixture_key, FixtureEntry, PromptClass};
use lesson_loop_core::eval::{position_key, EvalResult};
use lesson_loop_core::metrics::Report;
use lesson_loop_core::RunResult;
use serde_json::json;

const SOLICIT: [PromptClass; 4] =
    [PromptClass::SolicitA, PromptClass::SolicitB, PromptClass::SolicitC, PromptClass::SolicitD];

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn write(&self, rel: &str, contents: &str) -> PathBuf {
        let p = self.path(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(&p, contents).unwrap();
        p
    }

    fn runs(&self) -> PathBuf {
        self.path("runs")
    }

    fn cli(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_lesson-loop"))
            .args(args)
            .current_dir(self.dir.path())
            .env("LESSONL_RUN_ROOT", self.runs())
            .output()
            .unwrap()
    }

    fn run_dirs(&self) -> Vec<PathBuf> {
        let Ok(entries) = fs::read_dir(self.runs()) else { return Vec::new() };
        let mut v: Vec<_> = entries.map(|e| e.unwrap().path()).collect();
        v.sort();
        v
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_dir_of(o: &Output) -> PathBuf {
    assert!(o.status.success(), "run failed: {}", stderr(o));
    PathBuf::from(stdout(o).lines().next().expect("run prints its directory"))
}

fn agent_fixture(problem: &str, agent: usize, rounds: usize) -> String {
    let mut m = BTreeMap::new();
    for r in 0..=rounds {
        let class = if r == 0 { PromptClass::Initial } else { PromptClass::Improve };
        let code = format!("int {problem}() {{ return {r}{agent}; }}");
        m.insert(fixture_key(class, r, agent), FixtureEntry::text(format!("```C++\n{code}\n```")));
        for s in SOLICIT {
            m.insert(fixture_key(s, r, agent), FixtureEntry::text(format!("Lesson {problem} r{r} a{agent} ({s}).")));
        }
    }
    serde_json::to_string_pretty(&m).unwrap()
}

fn verdict(problem_idx: usize, r: usize, j: usize) -> EvalResult {
    match (problem_idx + r * 5 + j * 3) % 5 {
        0 => EvalResult::timed(1.0 + 0.5 * (r + j) as f64, 4),
        1 => EvalResult::timed(0.7, 4),
        2 => EvalResult::incorrect(1, 4),
        3 => EvalResult::compile_error("error: expected ';'"),
        _ => EvalResult::timed(2.5, 4),
    }
}

/// Two optimization problems, three scripted agents, scripted verdicts.
fn scripted_setup(ws: &Workspace, rounds: usize) -> PathBuf {
    let problems = ["alpha", "beta"];
    for (i, p) in problems.iter().enumerate() {
        ws.write(&format!("pset/{p}/problem.json"), &json!({ "id": p }).to_string());
        ws.write(&format!("pset/{p}/baseline.src"), &format!("int {p}() {{ int s = 0; for (int i = 0; i < 9; ++i) s += i; return s; }}"));
        for j in 0..3 {
            ws.write(&format!("fx/agent{j}/{p}.json"), &agent_fixture(p, j, rounds));
        }
        let mut verdicts = BTreeMap::new();
        for r in 0..=rounds {
            for j in 0..3 {
                verdicts.insert(position_key(r, j), verdict(i, r, j));
            }
        }
        ws.write(&format!("fx/eval/{p}.json"), &serde_json::to_string_pretty(&verdicts).unwrap());
    }
    let agents: Vec<_> = (0..3)
        .map(|j| json!({ "name": format!("agent{j}"), "kind": "scripted", "model": "Qwen14B", "fixture_path": format!("fx/agent{j}") }))
        .collect();
    ws.write(
        "cfg.json",
        &json!({ "agents": agents, "evaluator": { "kind": "scripted", "fixture_path": "fx/eval" }, "rounds": rounds }).to_string(),
    )
}

fn read_result(run_dir: &Path, problem: &str) -> RunResult {
    serde_json::from_str(&fs::read_to_string(run_dir.join(format!("repeats/0/{problem}/result.json"))).unwrap()).unwrap()
}

#[test]
fn run_writes_artifacts_and_replays() {
    let ws = Workspace::new();
    scripted_setup(&ws, 4);
    let out = ws.cli(&["run", "--problems", "pset", "--config", "cfg.json", "--rounds", "4", "--k", "4", "--ablation", "full"]);
    let run_dir = run_dir_of(&out);
    assert!(run_dir.starts_with(ws.runs()));
    for f in ["manifest.json", "complete.json", "report.json", "report.csv"] {
        assert!(run_dir.join(f).exists(), "{f} missing");
    }
    for p in ["alpha", "beta"] {
        for f in ["problem.json", "transcript.jsonl", "bank.jsonl", "result.json", "fixtures/agent0.json", "fixtures/eval.json"] {
            assert!(run_dir.join(format!("repeats/0/{p}/{f}")).exists(), "{p}/{f} missing");
        }
        assert_eq!(read_result(&run_dir, p).bank_snapshot.len(), 3 * 5);
    }
    let report: Report = serde_json::from_str(&fs::read_to_string(run_dir.join("report.json")).unwrap()).unwrap();
    assert!(!report.partial);
    assert_eq!(report.summary.per_problem.len(), 2);
    assert!(report.cost.is_some(), "Qwen14B is priced");

    let replay = ws.cli(&["replay", run_dir.to_str().unwrap()]);
    assert!(replay.status.success(), "replay failed: {}", stderr(&replay));
}

#[test]
fn json_and_csv_reports_agree() {
    let ws = Workspace::new();
    scripted_setup(&ws, 2);
    let run_dir = run_dir_of(&ws.cli(&["run", "--problems", "pset", "--config", "cfg.json"]));
    let dir = run_dir.to_str().unwrap();
    let json_out = ws.cli(&["report", dir, "--format", "json"]);
    assert!(json_out.status.success());
    let report: Report = serde_json::from_str(&stdout(&json_out)).unwrap();
    let csv_out = ws.cli(&["report", dir, "--format", "csv"]);
    assert!(csv_out.status.success());
    let csv = stdout(&csv_out);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 1 + report.summary.per_problem.len());
    let header: Vec<&str> = lines[0].split(',').collect();
    let col = header.iter().position(|h| *h == "clamped_speedup").unwrap();
    for (line, row) in lines[1..].iter().zip(&report.summary.per_problem) {
        let got: f64 = line.split(',').nth(col).unwrap().parse().unwrap();
        assert_eq!(got, row.clamped_speedup);
    }
}

#[test]
fn unknown_report_format_is_a_usage_error() {
    let ws = Workspace::new();
    let out = ws.cli(&["report", "somewhere", "--format", "xml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("unknown report format"));
}

#[test]
fn report_without_results_fails() {
    let ws = Workspace::new();
    let out = ws.cli(&["report", ws.path("nothing").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn in_progress_run_reports_partial() {
    let ws = Workspace::new();
    scripted_setup(&ws, 1);
    let run_dir = run_dir_of(&ws.cli(&["run", "--problems", "pset", "--config", "cfg.json"]));
    fs::remove_file(run_dir.join("complete.json")).unwrap();
    fs::remove_dir_all(run_dir.join("repeats/0/beta")).unwrap();
    let out = ws.cli(&["report", run_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: Report = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(report.partial);
    assert_eq!(report.summary.per_problem.len(), 1);
}

#[test]
fn tampered_manifest_diverges() {
    let ws = Workspace::new();
    scripted_setup(&ws, 4);
    let run_dir = run_dir_of(&ws.cli(&["run", "--problems", "pset", "--config", "cfg.json"]));
    let path = run_dir.join("manifest.json");
    let mut manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    manifest["config"]["selection"]["k"] = json!(2);
    fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
    let out = ws.cli(&["replay", run_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("diverges at transcript line"), "{}", stderr(&out));
}

#[test]
fn replay_with_missing_fixture_is_a_load_error() {
    let ws = Workspace::new();
    scripted_setup(&ws, 1);
    let run_dir = run_dir_of(&ws.cli(&["run", "--problems", "pset", "--config", "cfg.json"]));
    fs::remove_file(run_dir.join("repeats/0/alpha/fixtures/eval.json")).unwrap();
    let out = ws.cli(&["replay", run_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("eval.json"), "{}", stderr(&out));
}

#[test]
fn no_lessons_selects_nothing() {
    let ws = Workspace::new();
    scripted_setup(&ws, 3);
    let run_dir = run_dir_of(&ws.cli(&["run", "--problems", "pset", "--config", "cfg.json", "--rounds", "3", "--ablation", "no_lessons"]));
    let result = read_result(&run_dir, "alpha");
    assert_eq!(result.selections_per_round.len(), 3);
    assert!(result.selections_per_round.iter().all(|s| s.selection.is_empty()));
    let transcript = fs::read_to_string(run_dir.join("repeats/0/alpha/transcript.jsonl")).unwrap();
    assert_eq!(transcript.lines().filter(|l| l.contains("\"phase\":\"select\"")).count(), 3);
}

#[test]
fn generation_run_stops_early() {
    let ws = Workspace::new();
    ws.write("gset/add/problem.json", &json!({ "id": "add", "task": "generate", "tests": [{ "code": "assert add(1, 2) == 3" }] }).to_string());
    ws.write("gset/add/baseline.src", "def add(a, b):\n  \"\"\" Return a + b \"\"\"");
    let mut m = BTreeMap::new();
    m.insert(fixture_key(PromptClass::Initial, 0, 0), FixtureEntry::text("```Python\ndef add(a, b):\n  return a + b\n```"));
    ws.write("gfx/agent.json", &serde_json::to_string(&m).unwrap());
    ws.write("gfx/eval.json", &serde_json::to_string(&BTreeMap::from([("default", EvalResult::tested(1, 1))])).unwrap());
    ws.write(
        "gcfg.json",
        &json!({
            "agents": [{ "name": "solo", "kind": "scripted", "fixture_path": "gfx/agent.json" }],
            "evaluator": { "kind": "scripted", "fixture_path": "gfx/eval.json" },
            "mode": "generate"
        })
        .to_string(),
    );
    let run_dir = run_dir_of(&ws.cli(&["run", "--problems", "gset", "--config", "gcfg.json", "--mode", "generate"]));
    let result = read_result(&run_dir, "add");
    assert_eq!(result.early_stop, Some(0));
    assert_eq!(result.rounds_completed, 0);
    let transcript = fs::read_to_string(run_dir.join("repeats/0/add/transcript.jsonl")).unwrap();
    assert!(transcript.contains("\"phase\":\"early_stop\""));
}

#[test]
fn flags_and_file_share_a_digest() {
    let ws = Workspace::new();
    scripted_setup(&ws, 2);
    let via_flags = run_dir_of(&ws.cli(&["run", "--problems", "pset", "--config", "cfg.json", "--rounds", "2", "--k", "3"]));
    let mut cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(ws.path("cfg.json")).unwrap()).unwrap();
    cfg["rounds"] = json!(2);
    cfg["selection"] = json!({ "k": 3 });
    ws.write("cfg2.json", &cfg.to_string());
    let via_file = run_dir_of(&ws.cli(&["run", "--problems", "pset", "--config", "cfg2.json"]));
    let digest = |d: &Path| {
        let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("manifest.json")).unwrap()).unwrap();
        m["config_digest"].as_str().unwrap().to_string()
    };
    assert_ne!(via_flags, via_file);
    assert_eq!(digest(&via_flags), digest(&via_file));
}

#[test]
fn repeats_use_distinct_seeds_and_report_spread() {
    let ws = Workspace::new();
    scripted_setup(&ws, 1);
    let out = ws.cli(&["run", "--problems", "pset", "--config", "cfg.json", "--repeats", "3", "--seed", "5"]);
    let run_dir = run_dir_of(&out);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    let seeds: Vec<u64> = manifest["seeds"].as_array().unwrap().iter().map(|s| s.as_u64().unwrap()).collect();
    assert_eq!(seeds.len(), 3);
    assert_eq!(seeds[0], 5);
    assert!(seeds[0] != seeds[1] && seeds[1] != seeds[2] && seeds[0] != seeds[2]);
    let report: Report = serde_json::from_str(&fs::read_to_string(run_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.repeat_stats.unwrap().repeats, 3);
    assert!(stdout(&out).contains("over 3 repeats"));
}

#[test]
fn ablate_runs_each_variant() {
    let ws = Workspace::new();
    scripted_setup(&ws, 1);
    let out = ws.cli(&["ablate", "--problems", "pset", "--config", "cfg.json", "--variants", "full,no_lessons,random_k"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let dirs = ws.run_dirs();
    assert_eq!(dirs.len(), 3);
    let mut seen: Vec<String> = dirs
        .iter()
        .map(|d| {
            let r: Report = serde_json::from_str(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
            r.ablation
        })
        .collect();
    seen.sort();
    assert_eq!(seen, ["full", "no_lessons", "random_k"]);
    assert!(ws.cli(&["ablate", "--problems", "pset", "--config", "cfg.json", "--variants", "bogus"]).status.code() == Some(2));
}

#[test]
fn configuration_errors_leave_no_run_directory() {
    let ws = Workspace::new();
    scripted_setup(&ws, 1);
    fs::remove_file(ws.path("fx/agent1/beta.json")).unwrap();
    let out = ws.cli(&["run", "--problems", "pset", "--config", "cfg.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("agent1"), "{}", stderr(&out));
    assert!(ws.run_dirs().is_empty());

    scripted_setup(&ws, 1);
    let out = ws.cli(&["run", "--problems", "pset", "--config", "cfg.json", "--mode", "generate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(ws.run_dirs().is_empty());
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn remote_agent_keys_never_reach_artifacts() {
    const KEY_ENV: &str = "LESSON_LOOP_TEST_API_KEY";
    const SECRET: &str = "sk-test-7f3a9c1e5b2d";
    let body = json!({
        "choices": [{ "message": { "role": "assistant", "content": "```C++\nint alpha() { return 1; }\n```" } }],
        "usage": { "prompt_tokens": 120, "completion_tokens": 40 }
    });
    let server = StubServer::start(vec![(200, body.to_string())]);

    let ws = Workspace::new();
    ws.write("pset/alpha/problem.json", &json!({ "id": "alpha" }).to_string());
    ws.write("pset/alpha/baseline.src", "int alpha() { return 0; }");
    ws.write("eval.json", &serde_json::to_string(&BTreeMap::from([("default", EvalResult::timed(1.5, 2))])).unwrap());
    ws.write(
        "cfg.json",
        &json!({
            "agents": [{ "name": "remote", "kind": "remote", "endpoint_url": server.base_url, "model": "GPT-4o", "api_key_env": KEY_ENV }],
            "evaluator": { "kind": "scripted", "fixture_path": "eval.json" },
            "rounds": 1
        })
        .to_string(),
    );
    let out = Command::new(env!("CARGO_BIN_EXE_lesson-loop"))
        .args(["run", "--problems", "pset", "--config", "cfg.json"])
        .current_dir(ws.dir.path())
        .env("LESSONL_RUN_ROOT", ws.runs())
        .env(KEY_ENV, SECRET)
        .output()
        .unwrap();
    let run_dir = run_dir_of(&out);
    let requests = server.requests();
    assert!(!requests.is_empty());
    assert!(requests[0].head.contains(&format!("Bearer {SECRET}")), "the key is sent to the endpoint");

    let files = files_under(&run_dir);
    assert!(files.len() > 5);
    for f in &files {
        let text = fs::read_to_string(f).unwrap();
        assert!(!text.contains(SECRET), "{} leaks the API key", f.display());
    }
    let manifest = fs::read_to_string(run_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains(KEY_ENV), "the key is referenced by variable name");
    let report: Report = serde_json::from_str(&fs::read_to_string(run_dir.join("report.json")).unwrap()).unwrap();
    assert!(report.usage["GPT-4o"].input_tokens >= 120);

    drop(server);
    let replay = ws.cli(&["replay", run_dir.to_str().unwrap()]);
    assert!(replay.status.success(), "offline replay failed: {}", stderr(&replay));
}
