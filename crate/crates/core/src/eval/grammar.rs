//! Line grammar printed by compiled measurement harnesses.
//!
//! ```text
//! INPUT_DIGEST=<hex>
//! CORRECT=<0|1>
//! TESTS_PASSED=<int>/<int>
//! TIME_NS median=<int> samples=<int>
//! ```
//!
//! Lines that start with none of these keys are ignored. A line that starts
//! with a key but does not match its form is an error.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochSample {
    pub median_ns: u64,
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HarnessLine {
    InputDigest(String),
    Correct(bool),
    TestsPassed { passed: u32, total: u32 },
    TimeNs(EpochSample),
}

impl fmt::Display for HarnessLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarnessLine::InputDigest(d) => write!(f, "INPUT_DIGEST={d}"),
            HarnessLine::Correct(c) => write!(f, "CORRECT={}", u8::from(*c)),
            HarnessLine::TestsPassed { passed, total } => write!(f, "TESTS_PASSED={passed}/{total}"),
            HarnessLine::TimeNs(s) => write!(f, "TIME_NS median={} samples={}", s.median_ns, s.samples),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("harness output line {line}: {message}: {text:?}")]
pub struct GrammarError {
    pub line: usize,
    pub text: String,
    pub message: &'static str,
}

const MAX_DIGEST_LEN: usize = 64;

fn parse_int<T: std::str::FromStr>(s: &str) -> Option<T> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

/// Parses one line. `Ok(None)` means the line carries no grammar key.
pub fn parse_line(text: &str) -> Result<Option<HarnessLine>, &'static str> {
    let text = text.trim_end_matches(['\r', '\n']);
    if let Some(rest) = text.strip_prefix("INPUT_DIGEST=") {
        let ok = !rest.is_empty()
            && rest.len() <= MAX_DIGEST_LEN
            && rest.bytes().all(|b| b.is_ascii_hexdigit());
        return if ok {
            Ok(Some(HarnessLine::InputDigest(rest.to_ascii_lowercase())))
        } else {
            Err("digest must be 1 to 64 hex digits")
        };
    }
    if let Some(rest) = text.strip_prefix("CORRECT=") {
        return match rest {
            "0" => Ok(Some(HarnessLine::Correct(false))),
            "1" => Ok(Some(HarnessLine::Correct(true))),
            _ => Err("CORRECT must be 0 or 1"),
        };
    }
    if let Some(rest) = text.strip_prefix("TESTS_PASSED=") {
        let (p, t) = rest.split_once('/').ok_or("expected <passed>/<total>")?;
        let passed = parse_int(p).ok_or("passed count is not an integer")?;
        let total = parse_int(t).ok_or("total count is not an integer")?;
        if passed > total {
            return Err("passed exceeds total");
        }
        return Ok(Some(HarnessLine::TestsPassed { passed, total }));
    }
    if let Some(rest) = text.strip_prefix("TIME_NS ") {
        let mut parts = rest.split(' ');
        let median = parts
            .next()
            .and_then(|s| s.strip_prefix("median="))
            .and_then(parse_int::<u64>)
            .ok_or("expected median=<int>")?;
        let samples = parts
            .next()
            .and_then(|s| s.strip_prefix("samples="))
            .and_then(parse_int::<u64>)
            .ok_or("expected samples=<int>")?;
        if parts.next().is_some() {
            return Err("trailing fields");
        }
        if median == 0 || samples == 0 {
            return Err("median and samples must be positive");
        }
        return Ok(Some(HarnessLine::TimeNs(EpochSample { median_ns: median, samples })));
    }
    if text == "TIME_NS" || text.starts_with("TIME_NS\t") {
        return Err("expected median=<int> samples=<int>");
    }
    Ok(None)
}

/// Everything recognized in one harness invocation's stdout.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HarnessOutput {
    pub digests: Vec<String>,
    pub correct: Option<bool>,
    pub tests: Option<(u32, u32)>,
    pub epochs: Vec<EpochSample>,
}

pub fn parse_output(stdout: &str) -> Result<HarnessOutput, GrammarError> {
    let mut out = HarnessOutput::default();
    for (i, text) in stdout.lines().enumerate() {
        let parsed = parse_line(text)
            .map_err(|message| GrammarError { line: i + 1, text: text.to_string(), message })?;
        match parsed {
            None => {}
            Some(HarnessLine::InputDigest(d)) => out.digests.push(d),
            Some(HarnessLine::Correct(c)) => out.correct = Some(c),
            Some(HarnessLine::TestsPassed { passed, total }) => out.tests = Some((passed, total)),
            Some(HarnessLine::TimeNs(s)) => out.epochs.push(s),
        }
    }
    Ok(out)
}
