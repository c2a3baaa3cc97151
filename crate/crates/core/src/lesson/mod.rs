//! Lessons, the lesson bank, and the selection and effectiveness-adjustment
//! rules applied to it.

mod adjust;
mod embed;
mod select;

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

pub use adjust::adjust_factors;
pub use embed::{cosine, tokenize, EmbedError, Embedder, FallbackEmbedder, HashEmbedder};
pub use select::{
    select, select_high_relevance, select_high_speedup, ConfigError, Selection, SelectionConfig,
};

/// Identifier of a lesson, unique within one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LessonId(pub u64);

impl fmt::Display for LessonId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Outcome that a lesson was solicited for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LessonKind {
    Speedup,
    Slowdown,
    Incorrect,
    CompileError,
    /// Generation mode: the code failed some of its tests.
    TestFailure,
}

/// One banked lesson.
///
/// `score` is the measured speedup of the code the lesson was written about
/// (optimization) or the fraction of tests it passed (generation). `factor`
/// starts at one and is overwritten each time the lesson is selected and
/// adjusted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lesson<S> {
    pub id: LessonId,
    pub agent_id: usize,
    #[serde(rename = "round")]
    pub round_index: usize,
    pub kind: LessonKind,
    pub score: S,
    pub factor: S,
    pub content: String,
    #[serde(skip)]
    pub embedding: Option<Vec<S>>,
}

impl<S: Real> Lesson<S> {
    pub fn new(
        id: LessonId,
        agent_id: usize,
        round_index: usize,
        kind: LessonKind,
        score: S,
        content: impl Into<String>,
    ) -> Self {
        Self {
            id,
            agent_id,
            round_index,
            kind,
            score,
            factor: S::one(),
            content: content.into(),
            embedding: None,
        }
    }

    /// The key used by speedup-based selection.
    pub fn weighted_score(&self) -> S {
        self.score * self.factor
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BankError {
    #[error("lesson id {0} already present in the bank")]
    DuplicateId(LessonId),
    #[error("lesson id {id} is not greater than the last deposited id {last}")]
    NonIncreasingId { id: LessonId, last: LessonId },
    #[error("lesson {0} deposited with a factor other than 1")]
    FactorNotInitial(LessonId),
    #[error("lesson {0} has a negative or non-finite score")]
    InvalidScore(LessonId),
    #[error("bank dump line {line}: {message}")]
    Dump { line: usize, message: String },
}

/// Ordered store of every lesson deposited during one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LessonBank<S> {
    lessons: Vec<Lesson<S>>,
}

impl<S: Real> LessonBank<S> {
    pub fn new() -> Self {
        Self { lessons: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.lessons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lessons.is_empty()
    }

    pub fn lessons(&self) -> &[Lesson<S>] {
        &self.lessons
    }

    pub fn iter(&self) -> impl Iterator<Item = &Lesson<S>> {
        self.lessons.iter()
    }

    /// Id that a freshly created lesson should receive.
    pub fn next_id(&self) -> LessonId {
        self.lessons
            .last()
            .map_or(LessonId(0), |l| LessonId(l.id.0 + 1))
    }

    pub fn get(&self, id: LessonId) -> Option<&Lesson<S>> {
        self.position(id).map(|i| &self.lessons[i])
    }

    pub(crate) fn get_mut(&mut self, id: LessonId) -> Option<&mut Lesson<S>> {
        self.position(id).map(move |i| &mut self.lessons[i])
    }

    fn position(&self, id: LessonId) -> Option<usize> {
        // ids are strictly increasing, so the store is sorted by id
        self.lessons.binary_search_by_key(&id, |l| l.id).ok()
    }

    /// Appends a lesson at the end of the bank.
    pub fn deposit(&mut self, lesson: Lesson<S>) -> Result<(), BankError> {
        if self.get(lesson.id).is_some() {
            return Err(BankError::DuplicateId(lesson.id));
        }
        if let Some(last) = self.lessons.last() {
            if lesson.id <= last.id {
                return Err(BankError::NonIncreasingId { id: lesson.id, last: last.id });
            }
        }
        if lesson.factor != S::one() {
            return Err(BankError::FactorNotInitial(lesson.id));
        }
        if !(lesson.score >= S::zero()) || !lesson.score.is_finite() {
            return Err(BankError::InvalidScore(lesson.id));
        }
        self.lessons.push(lesson);
        Ok(())
    }

    /// Appends a lesson from a snapshot, keeping its factor. Otherwise
    /// checked like [`LessonBank::deposit`].
    pub fn restore(&mut self, lesson: Lesson<S>) -> Result<(), BankError> {
        let factor = lesson.factor;
        let id = lesson.id;
        self.deposit(Lesson { factor: S::one(), ..lesson })?;
        self.get_mut(id).expect("just deposited").factor = factor;
        Ok(())
    }

    /// Computes and caches embeddings for lessons that have none yet.
    pub fn ensure_embeddings<E>(&mut self, embedder: &E) -> Result<(), EmbedError>
    where
        E: Embedder<S> + ?Sized,
    {
        for lesson in self.lessons.iter_mut().filter(|l| l.embedding.is_none()) {
            lesson.embedding = Some(embedder.embed(&lesson.content)?);
        }
        Ok(())
    }

    /// Drops cached embeddings, e.g. after the embedder changed.
    pub fn clear_embeddings(&mut self) {
        for lesson in &mut self.lessons {
            lesson.embedding = None;
        }
    }
}

impl<S> LessonBank<S>
where
    S: Real + Serialize + for<'de> Deserialize<'de>,
{
    /// Writes one JSON object per lesson, in deposit order. Embeddings are
    /// not written.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for lesson in &self.lessons {
            serde_json::to_writer(&mut out, lesson)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    /// Reads a dump produced by [`LessonBank::write_jsonl`]. Factors are
    /// restored as written, bypassing the deposit precondition.
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, BankError> {
        let mut bank = Self::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| BankError::Dump { line: i + 1, message: e.to_string() })?;
            if line.trim().is_empty() {
                continue;
            }
            let lesson: Lesson<S> = serde_json::from_str(&line)
                .map_err(|e| BankError::Dump { line: i + 1, message: e.to_string() })?;
            bank.restore(lesson)?;
        }
        Ok(bank)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lesson(id: u64) -> Lesson<f64> {
        Lesson::new(LessonId(id), 0, 0, LessonKind::Speedup, 1.5, format!("lesson {id}"))
    }

    #[test]
    fn deposit_into_empty_bank() {
        let mut bank = LessonBank::new();
        bank.deposit(lesson(0)).unwrap();
        assert_eq!(bank.len(), 1);
        assert_eq!(bank.lessons()[0].id, LessonId(0));
    }

    #[test]
    fn deposit_preserves_order() {
        let mut bank = LessonBank::new();
        bank.deposit(lesson(0)).unwrap();
        bank.deposit(lesson(1)).unwrap();
        let ids: Vec<_> = bank.iter().map(|l| l.id.0).collect();
        assert_eq!(ids, vec![0, 1]);
        assert_eq!(bank.next_id(), LessonId(2));
    }

    #[test]
    fn deposit_rejects_duplicate_id() {
        let mut bank = LessonBank::new();
        bank.deposit(lesson(3)).unwrap();
        assert_eq!(bank.deposit(lesson(3)), Err(BankError::DuplicateId(LessonId(3))));
        assert_eq!(bank.len(), 1);
    }

    #[test]
    fn deposit_rejects_decreasing_id() {
        let mut bank = LessonBank::new();
        bank.deposit(lesson(5)).unwrap();
        assert!(matches!(bank.deposit(lesson(2)), Err(BankError::NonIncreasingId { .. })));
    }

    #[test]
    fn deposit_rejects_adjusted_factor() {
        let mut bank = LessonBank::new();
        let mut l = lesson(0);
        l.factor = 1.1;
        assert_eq!(bank.deposit(l), Err(BankError::FactorNotInitial(LessonId(0))));
    }

    #[test]
    fn dump_round_trips_without_embeddings() {
        let mut bank = LessonBank::new();
        bank.deposit(lesson(0)).unwrap();
        bank.deposit(Lesson::new(LessonId(1), 2, 1, LessonKind::CompileError, 0.0, "needs #include <vector>"))
            .unwrap();
        bank.get_mut(LessonId(0)).unwrap().factor = 0.9;
        bank.ensure_embeddings(&HashEmbedder::default()).unwrap();

        let dump = bank.to_jsonl();
        assert_eq!(dump.lines().count(), 2);
        let first: serde_json::Value = serde_json::from_str(dump.lines().next().unwrap()).unwrap();
        let mut keys: Vec<_> = first.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["agent_id", "content", "factor", "id", "kind", "round", "score"]);

        let back = LessonBank::<f64>::read_jsonl(dump.as_bytes()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.lessons()[0].factor, 0.9);
        assert!(back.lessons()[0].embedding.is_none());
        assert_eq!(back.lessons()[1].kind, LessonKind::CompileError);
    }
}
