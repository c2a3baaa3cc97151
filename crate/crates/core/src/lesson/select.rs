use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::embed::{cosine, EmbedError, Embedder};
use super::{Lesson, LessonBank, LessonId};
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("threshold must be positive, got {0}")]
    Threshold(f64),
    #[error("epsilon must lie in (0, 1), got {0}")]
    Epsilon(f64),
}

/// Parameters of lesson selection and factor adjustment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig<S> {
    /// Lessons fed into each round.
    pub k: usize,
    /// Minimum `score * factor` for the speedup half.
    pub threshold: S,
    /// Adjustment step.
    pub epsilon: S,
}

impl<S: Real> SelectionConfig<S> {
    pub fn new(k: usize, threshold: S, epsilon: S) -> Result<Self, ConfigError> {
        let cfg = Self { k, threshold, epsilon };
        cfg.validate()?;
        Ok(cfg)
    }

    /// k = 4, threshold = 1.1, epsilon = 0.1.
    pub fn optimize_defaults() -> Self {
        Self { k: 4, threshold: S::lit(1.1), epsilon: S::lit(0.1) }
    }

    /// Same as [`Self::optimize_defaults`] with the threshold read as a
    /// pass fraction of 0.5.
    pub fn generate_defaults() -> Self {
        Self { threshold: S::lit(0.5), ..Self::optimize_defaults() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k == 0 {
            return Err(ConfigError::ZeroK);
        }
        let f = |v: S| v.to_f64().unwrap_or(f64::NAN);
        if !(self.threshold > S::zero()) {
            return Err(ConfigError::Threshold(f(self.threshold)));
        }
        if !(self.epsilon > S::zero() && self.epsilon < S::one()) {
            return Err(ConfigError::Epsilon(f(self.epsilon)));
        }
        Ok(())
    }

    /// Size of the speedup half, `ceil(k / 2)`.
    pub fn speedup_count(&self) -> usize {
        self.k.div_ceil(2)
    }

    /// Size of the relevance half, `floor(k / 2)`.
    pub fn relevance_count(&self) -> usize {
        self.k / 2
    }
}

/// Lessons chosen for one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Selection {
    /// The bank held no more than k lessons; all of them, in deposit order.
    All { ids: Vec<LessonId> },
    /// Speedup half followed by relevance half.
    Split { speedup: Vec<LessonId>, relevance: Vec<LessonId> },
    /// Any other rule (ablations); ids in selection order.
    Listed { ids: Vec<LessonId> },
}

impl Selection {
    pub fn empty() -> Self {
        Selection::Listed { ids: Vec::new() }
    }

    pub fn ids(&self) -> Vec<LessonId> {
        match self {
            Selection::All { ids } | Selection::Listed { ids } => ids.clone(),
            Selection::Split { speedup, relevance } => {
                speedup.iter().chain(relevance).copied().collect()
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Selection::All { ids } | Selection::Listed { ids } => ids.len(),
            Selection::Split { speedup, relevance } => speedup.len() + relevance.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Descending key, ascending id on ties or incomparable keys.
fn by_key_desc<S: Real>(ka: S, a: LessonId, kb: S, b: LessonId) -> Ordering {
    kb.partial_cmp(&ka).unwrap_or(Ordering::Equal).then(a.cmp(&b))
}

/// Up to `cnt` lessons with the largest `score * factor` that also reach
/// `threshold`, and the rest. Both lists are in descending `score * factor`
/// order.
pub fn select_high_speedup<'a, S: Real>(
    lessons: &[&'a Lesson<S>],
    cnt: usize,
    threshold: S,
) -> (Vec<&'a Lesson<S>>, Vec<&'a Lesson<S>>) {
    let mut sorted = lessons.to_vec();
    sorted.sort_by(|a, b| by_key_desc(a.weighted_score(), a.id, b.weighted_score(), b.id));
    let mut selected = Vec::with_capacity(cnt);
    let mut remain = Vec::with_capacity(sorted.len());
    for lesson in sorted {
        if selected.len() < cnt && lesson.weighted_score() >= threshold {
            selected.push(lesson);
        } else {
            remain.push(lesson);
        }
    }
    (selected, remain)
}

/// The `cnt` lessons of `remain` whose content is most similar to
/// `query_code`, in descending similarity.
pub fn select_high_relevance<'a, S, E>(
    remain: &[&'a Lesson<S>],
    cnt: usize,
    query_code: &str,
    embedder: &E,
) -> Result<Vec<&'a Lesson<S>>, EmbedError>
where
    S: Real,
    E: Embedder<S> + ?Sized,
{
    if cnt == 0 || remain.is_empty() {
        return Ok(Vec::new());
    }
    let query = embedder.embed(query_code)?;
    let mut scored = Vec::with_capacity(remain.len());
    for &lesson in remain {
        let sim = match &lesson.embedding {
            Some(e) if e.len() == query.len() => cosine(e, &query),
            _ => cosine(&embedder.embed(&lesson.content)?, &query),
        };
        scored.push((sim, lesson));
    }
    scored.sort_by(|(sa, a), (sb, b)| by_key_desc(*sa, a.id, *sb, b.id));
    Ok(scored.into_iter().take(cnt).map(|(_, l)| l).collect())
}

/// Chooses the lessons for the next round: every lesson while the bank holds
/// at most k, otherwise the speedup half followed by the relevance half over
/// what the speedup half left behind.
pub fn select<S, E>(
    bank: &LessonBank<S>,
    config: &SelectionConfig<S>,
    query_code: &str,
    embedder: &E,
) -> Result<Selection, EmbedError>
where
    S: Real,
    E: Embedder<S> + ?Sized,
{
    if bank.len() <= config.k {
        return Ok(Selection::All { ids: bank.iter().map(|l| l.id).collect() });
    }
    let all: Vec<&Lesson<S>> = bank.iter().collect();
    let (speedup, remain) = select_high_speedup(&all, config.speedup_count(), config.threshold);
    let relevance = select_high_relevance(&remain, config.relevance_count(), query_code, embedder)?;
    Ok(Selection::Split {
        speedup: speedup.iter().map(|l| l.id).collect(),
        relevance: relevance.iter().map(|l| l.id).collect(),
    })
}
