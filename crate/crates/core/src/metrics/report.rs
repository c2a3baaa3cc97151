use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{mean_std, BenchmarkSummary, CostEstimate, MetricsError};
use crate::agent::AgentUsage;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Spread of headline metrics across repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatStats {
    pub repeats: usize,
    pub geomean_speedup: MeanStd,
    pub correct_fraction: MeanStd,
    pub gt2x_fraction: MeanStd,
}

impl RepeatStats {
    pub fn from_summaries(summaries: &[BenchmarkSummary]) -> Option<Self> {
        let stat = |f: fn(&BenchmarkSummary) -> f64| {
            let v: Vec<f64> = summaries.iter().map(f).collect();
            mean_std(&v).map(|(mean, std)| MeanStd { mean, std })
        };
        Some(Self {
            repeats: summaries.len(),
            geomean_speedup: stat(|s| s.geomean_speedup)?,
            correct_fraction: stat(|s| s.correct_fraction)?,
            gt2x_fraction: stat(|s| s.gt2x_fraction)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub ablation: String,
    pub config_digest: String,
    pub seed: u64,
    /// Set when the run had not finished every problem.
    pub partial: bool,
    pub summary: BenchmarkSummary,
    /// Token usage keyed by model.
    pub usage: BTreeMap<String, AgentUsage>,
    pub cost: Option<CostEstimate>,
    pub flops: BTreeMap<String, u128>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeat_stats: Option<RepeatStats>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    problem_id: &'a str,
    status: &'a str,
    correct: bool,
    speedup_raw: Option<f64>,
    clamped_speedup: f64,
    tests_passed: u32,
    tests_total: u32,
    ablation: &'a str,
    config_digest: &'a str,
    seed: u64,
}

impl Report {
    pub fn to_json(&self) -> Result<String, MetricsError> {
        serde_json::to_string_pretty(self).map_err(|e| MetricsError::Serialize(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, MetricsError> {
        serde_json::from_str(text).map_err(|e| MetricsError::Serialize(e.to_string()))
    }

    /// One row per problem after a header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.summary.per_problem {
            let status = match row.status {
                Some(s) => serde_json::to_value(s)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_owned))
                    .unwrap_or_default(),
                None => "keep_original".into(),
            };
            w.serialize(CsvRow {
                problem_id: &row.problem_id,
                status: &status,
                correct: row.correct,
                speedup_raw: row.speedup_raw,
                clamped_speedup: row.clamped_speedup,
                tests_passed: row.tests_passed,
                tests_total: row.tests_total,
                ablation: &self.ablation,
                config_digest: &self.config_digest,
                seed: self.seed,
            })
            .map_err(|e| MetricsError::Serialize(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String, MetricsError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}
