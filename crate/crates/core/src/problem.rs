//! Problem definitions and problem-set loading.
//!
//! A problem set is a directory with one subdirectory per problem:
//!
//! ```text
//! pset/
//!   matmul/
//!     problem.json   # id, mode, task, tests, ...
//!     baseline.src   # code to optimize, or signature + docstring
//!     driver.json    # optional input-generator declaration
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    #[default]
    Serial,
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    #[default]
    Optimize,
    Generate,
}

impl TaskKind {
    pub fn default_language(self) -> &'static str {
        match self {
            TaskKind::Optimize => "C++",
            TaskKind::Generate => "Python",
        }
    }
}

/// Output comparison used by the correctness check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Comparison {
    /// Integral outputs, compared exactly.
    Exact,
    /// `|a - b| <= abs + rel * max(|a|, |b|)`.
    Tolerance { rel: f64, abs: f64 },
    /// Element-wise equality of containers.
    Container,
}

impl Default for Comparison {
    fn default() -> Self {
        Comparison::Tolerance { rel: 1e-6, abs: 1e-9 }
    }
}

impl Comparison {
    pub fn scalars_match(&self, expected: f64, actual: f64) -> bool {
        match *self {
            Comparison::Exact | Comparison::Container => expected == actual,
            Comparison::Tolerance { rel, abs } => {
                if expected == actual {
                    return true;
                }
                let scale = expected.abs().max(actual.abs());
                (expected - actual).abs() <= abs + rel * scale
            }
        }
    }

    pub fn slices_match(&self, expected: &[f64], actual: &[f64]) -> bool {
        expected.len() == actual.len()
            && expected.iter().zip(actual).all(|(&e, &a)| self.scalars_match(e, a))
    }
}

/// Declares how one argument of the entry point is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSpec {
    Array { len: usize, min: f64, max: f64 },
    Grid { rows: usize, cols: usize, min: f64, max: f64 },
    Graph { vertices: usize, min_edges: usize, max_edges: usize },
    Scalar { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DriverSpec {
    #[serde(default)]
    pub inputs: Vec<InputSpec>,
    #[serde(default)]
    pub compare: Comparison,
}

/// One generation-mode test: code appended after the candidate that must run
/// without error (typically an `assert`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    #[serde(default)]
    pub name: Option<String>,
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    #[serde(default)]
    pub mode: ExecMode,
    #[serde(default)]
    pub task: TaskKind,
    #[serde(default)]
    pub language: Option<String>,
    /// Code to optimize, or the signature and docstring to implement.
    #[serde(default)]
    pub baseline_source: String,
    #[serde(default)]
    pub driver: Option<DriverSpec>,
    #[serde(default)]
    pub tests: Vec<TestCase>,
    #[serde(default)]
    pub synthetic_test_budget: Option<u32>,
    /// Input seed; the run seed is used when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Problem {
    pub fn optimize(id: impl Into<String>, baseline_source: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            mode: ExecMode::Serial,
            task: TaskKind::Optimize,
            language: None,
            baseline_source: baseline_source.into(),
            driver: None,
            tests: Vec::new(),
            synthetic_test_budget: None,
            seed: None,
        }
    }

    pub fn generate(id: impl Into<String>, signature: impl Into<String>, tests: Vec<TestCase>) -> Self {
        Self { task: TaskKind::Generate, tests, ..Self::optimize(id, signature) }
    }

    pub fn language(&self) -> &str {
        self.language.as_deref().unwrap_or_else(|| self.task.default_language())
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("id: must be nonempty".into());
        }
        match self.task {
            TaskKind::Optimize if self.baseline_source.trim().is_empty() => {
                Err("baseline_source: optimize problems need a nonempty baseline".into())
            }
            TaskKind::Generate
                if self.tests.is_empty() && self.synthetic_test_budget.unwrap_or(0) == 0 =>
            {
                Err("tests: generate problems need at least one test or a synthetic test budget".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: missing mandatory file")]
    Missing { path: PathBuf },
    #[error("{path}: field `{field}`: {message}")]
    Field { path: PathBuf, field: String, message: String },
}

fn read(path: &Path) -> Result<String, LoadError> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(s),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(LoadError::Missing { path: path.to_path_buf() })
        }
        Err(e) => Err(LoadError::Io { path: path.to_path_buf(), source: e }),
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T, LoadError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| LoadError::Field {
        path: path.to_path_buf(),
        field: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

/// Loads one problem directory.
pub fn load_problem(dir: &Path) -> Result<Problem, LoadError> {
    let meta_path = dir.join("problem.json");
    let mut problem: Problem = parse_json(&meta_path, &read(&meta_path)?)?;

    let baseline_path = dir.join("baseline.src");
    problem.baseline_source = read(&baseline_path)?;

    let driver_path = dir.join("driver.json");
    if driver_path.exists() {
        problem.driver = Some(parse_json(&driver_path, &read(&driver_path)?)?);
    }

    problem.validate().map_err(|msg| {
        let (field, message) = msg.split_once(": ").unwrap_or(("", &msg));
        LoadError::Field { path: meta_path.clone(), field: field.into(), message: message.into() }
    })?;
    Ok(problem)
}

/// Loads every problem subdirectory of `dir`, sorted by problem id.
pub fn load_problem_set(dir: &Path) -> Result<Vec<Problem>, LoadError> {
    let entries = fs::read_dir(dir).map_err(|e| LoadError::Io { path: dir.to_path_buf(), source: e })?;
    let mut problems = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| LoadError::Io { path: dir.to_path_buf(), source: e })?;
        if entry.path().is_dir() {
            problems.push(load_problem(&entry.path())?);
        }
    }
    problems.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(problems)
}
