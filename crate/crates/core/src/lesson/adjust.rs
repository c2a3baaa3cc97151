use super::{LessonBank, LessonId};
use crate::scalar::Real;

/// Overwrites the factor of every selected lesson with `c / n`, where `c`
/// adds `1 + epsilon` for each round score strictly above the lesson's own
/// score and `1 - epsilon` otherwise (ties included). `n` is the number of
/// round scores. Ids not present in the bank are ignored.
pub fn adjust_factors<S: Real>(
    bank: &mut LessonBank<S>,
    selected: &[LessonId],
    round_scores: &[S],
    epsilon: S,
) {
    if round_scores.is_empty() {
        return;
    }
    let n = S::from_count(round_scores.len());
    let up = S::one() + epsilon;
    let down = S::one() - epsilon;
    for &id in selected {
        let Some(lesson) = bank.get_mut(id) else { continue };
        let s = lesson.score;
        let c = round_scores
            .iter()
            .fold(S::zero(), |c, &sj| c + if s < sj { up } else { down });
        // c / n lies in [down, up] exactly; the clamp only absorbs rounding
        lesson.factor = (c / n).max(down).min(up);
    }
}
