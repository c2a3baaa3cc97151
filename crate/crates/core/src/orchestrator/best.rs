use serde::{Deserialize, Serialize};

use super::Candidate;
use crate::eval::clamped_speedup;
use crate::metrics::is_correct;
use crate::problem::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Best {
    /// Index into the run's candidate list.
    Candidate { index: usize },
    /// No candidate ran correctly; the original code stands (speedup 1).
    KeepOriginal,
}

/// Optimization: the correct candidate with the largest clamped speedup.
/// Generation: the candidate with the largest pass fraction. Ties go to the
/// lowest round, then the lowest agent id.
pub fn best_solution(candidates: &[Candidate], task: TaskKind) -> Best {
    let key = |c: &Candidate| match task {
        TaskKind::Optimize => clamped_speedup(&c.eval),
        TaskKind::Generate => c.eval.pass_fraction(),
    };
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        if task == TaskKind::Optimize && !is_correct(&c.eval) {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let cb = &candidates[b];
                let better = key(c) > key(cb)
                    || (key(c) == key(cb) && (c.round_index, c.agent_id) < (cb.round_index, cb.agent_id));
                Some(if better { i } else { b })
            }
        };
    }
    best.map_or(Best::KeepOriginal, |index| Best::Candidate { index })
}
