//! Greedy, beam and ensemble decoding over any next-token model.

mod ensemble;
mod neural;
mod search;
pub mod toy;

pub use ensemble::Ensemble;
pub use neural::NeuralStep;
pub use search::{beam_search, greedy_decode, DecodeConfig, Hypothesis};

use crate::error::Result;

/// Autoregressive next-token distribution over a fixed set of sources.
///
/// Every hypothesis is attached to one source row; the decoder only ever
/// passes back states that this model produced.
/// Per-hypothesis log-probabilities and successor states.
pub type StepOutput<S> = (Vec<Vec<f64>>, Vec<S>);

pub trait StepModel {
    type State: Clone;

    fn vocab_size(&self) -> usize;

    /// Number of source rows.
    fn sources(&self) -> usize;

    /// Initial states for hypotheses rooted at `rows`.
    fn start(&self, rows: &[usize]) -> Result<Vec<Self::State>>;

    /// Natural-log probabilities of the next token given the previous one,
    /// one row of `vocab_size` values per hypothesis, plus the successor states.
    fn step(&self, rows: &[usize], states: &[Self::State], prev: &[usize]) -> Result<StepOutput<Self::State>>;
}

/// `log softmax` in 64-bit.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&x| x - lse).collect()
}
