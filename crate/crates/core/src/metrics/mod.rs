//! Benchmark aggregation and cost estimation.

mod cost;
mod report;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{clamped_speedup, EvalResult, EvalStatus};
use crate::scalar::Real;

pub use cost::{
    estimate_cost, estimate_flops, flops_per_token, load_pricing, parse_pricing, CostEstimate, ModelShape,
    PricingEntry, DEFAULT_PRICING_JSON,
};
pub use report::{MeanStd, RepeatStats, Report, REPORT_SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("geometric mean of an empty list")]
    Empty,
    #[error("geometric mean needs positive values, got {0}")]
    NonPositive(f64),
    #[error("no pricing entry for model `{0}`")]
    MissingPricing(String),
    #[error("pricing entry `{model}`: {message}")]
    InvalidPricing { model: String, message: String },
    #[error("pricing file: {0}")]
    PricingFile(String),
    #[error("i/o error writing report: {0}")]
    Io(#[from] std::io::Error),
    #[error("report serialization: {0}")]
    Serialize(String),
}

/// `(prod s_i)^(1/N)`, accumulated as a mean of logarithms.
pub fn geomean<S: Real>(values: &[S]) -> Result<S, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut log_sum = S::zero();
    for &v in values {
        if !(v > S::zero()) || !v.is_finite() {
            return Err(MetricsError::NonPositive(v.to_f64().unwrap_or(f64::NAN)));
        }
        log_sum = log_sum + v.ln();
    }
    Ok((log_sum / S::from_count(values.len())).exp())
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

/// Whether a best candidate counts as correct: it ran and passed every test.
pub fn is_correct(eval: &EvalResult) -> bool {
    match eval.status {
        EvalStatus::Faster | EvalStatus::Slower | EvalStatus::Passed => eval.tests_passed == eval.tests_total,
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemRow {
    pub problem_id: String,
    /// `None` when the original code was kept.
    pub status: Option<EvalStatus>,
    pub correct: bool,
    pub speedup_raw: Option<f64>,
    pub clamped_speedup: f64,
    pub tests_passed: u32,
    pub tests_total: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub correct_fraction: f64,
    pub gt2x_fraction: f64,
    pub geomean_speedup: f64,
    pub per_problem: Vec<ProblemRow>,
}

/// Aggregates the best result of each problem; `None` means the original
/// code was kept (speedup 1, not correct).
pub fn summarize(results: &[(String, Option<EvalResult>)]) -> Result<BenchmarkSummary, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::Empty);
    }
    let per_problem: Vec<ProblemRow> = results
        .iter()
        .map(|(id, best)| match best {
            Some(e) => ProblemRow {
                problem_id: id.clone(),
                status: Some(e.status),
                correct: is_correct(e),
                speedup_raw: e.speedup_raw,
                clamped_speedup: clamped_speedup(e),
                tests_passed: e.tests_passed,
                tests_total: e.tests_total,
            },
            None => ProblemRow {
                problem_id: id.clone(),
                status: None,
                correct: false,
                speedup_raw: None,
                clamped_speedup: 1.0,
                tests_passed: 0,
                tests_total: 0,
            },
        })
        .collect();
    let n = per_problem.len() as f64;
    let clamped: Vec<f64> = per_problem.iter().map(|r| r.clamped_speedup).collect();
    Ok(BenchmarkSummary {
        correct_fraction: per_problem.iter().filter(|r| r.correct).count() as f64 / n,
        gt2x_fraction: clamped.iter().filter(|&&s| s > 2.0).count() as f64 / n,
        geomean_speedup: geomean(&clamped)?,
        per_problem,
    })
}
