/// Counts tokens when a provider does not report usage.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> u64;
}

/// `ceil(chars / 4)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicCounter;

impl TokenCounter for HeuristicCounter {
    fn count(&self, text: &str) -> u64 {
        (text.chars().count() as u64).div_ceil(4)
    }
}

/// Adapter for an exact tokenizer supplied as a closure.
pub struct FnCounter<F>(pub F);

impl<F: Fn(&str) -> u64 + Send + Sync> TokenCounter for FnCounter<F> {
    fn count(&self, text: &str) -> u64 {
        (self.0)(text)
    }
}
