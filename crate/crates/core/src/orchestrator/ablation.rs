use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::lesson::{select, select_high_relevance, select_high_speedup, EmbedError, Embedder, Lesson, LessonBank, Selection};

/// Lesson-selection variants; `Full` is the complete method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    SpeedupOnly,
    RelevanceOnly,
    NoAdjustment,
    RandomK,
    NoLessons,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::Full,
        Ablation::SpeedupOnly,
        Ablation::RelevanceOnly,
        Ablation::NoAdjustment,
        Ablation::RandomK,
        Ablation::NoLessons,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::SpeedupOnly => "speedup_only",
            Ablation::RelevanceOnly => "relevance_only",
            Ablation::NoAdjustment => "no_adjustment",
            Ablation::RandomK => "random_k",
            Ablation::NoLessons => "no_lessons",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s)
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The lessons for `round` under the configured variant. Every variant
/// except `NoLessons` takes the whole bank while it holds at most k.
pub fn apply_ablation<E: Embedder<f64> + ?Sized>(
    config: &RunConfig,
    bank: &LessonBank<f64>,
    query: &str,
    embedder: &E,
    round: usize,
) -> Result<Selection, EmbedError> {
    let cfg = &config.selection;
    if config.ablation == Ablation::NoLessons {
        return Ok(Selection::empty());
    }
    if bank.len() <= cfg.k {
        return Ok(Selection::All { ids: bank.iter().map(|l| l.id).collect() });
    }
    let all: Vec<&Lesson<f64>> = bank.iter().collect();
    let ids = |ls: Vec<&Lesson<f64>>| ls.iter().map(|l| l.id).collect();
    Ok(match config.ablation {
        Ablation::Full | Ablation::NoAdjustment => select(bank, cfg, query, embedder)?,
        Ablation::SpeedupOnly => Selection::Listed { ids: ids(select_high_speedup(&all, cfg.k, cfg.threshold).0) },
        Ablation::RelevanceOnly => Selection::Listed { ids: ids(select_high_relevance(&all, cfg.k, query, embedder)?) },
        Ablation::RandomK => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
            rng.set_stream(round as u64);
            let picks = rand::seq::index::sample(&mut rng, all.len(), cfg.k);
            Selection::Listed { ids: picks.into_iter().map(|i| all[i].id).collect() }
        }
        Ablation::NoLessons => unreachable!("handled above"),
    })
}
