//! Small synthetic next-token models for testing search procedures.

use super::{log_softmax, StepModel};
use crate::error::{Error, Result};
use crate::tensor::Rng;

/// Distributions that depend only on the step index. Past the last table the
/// final one repeats.
#[derive(Clone, Debug)]
pub struct TableModel {
    logp: Vec<Vec<f64>>,
}

impl TableModel {
    /// `probs[t]` is the distribution of token `t + 1`.
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        let v = probs.first().map(Vec::len).unwrap_or(0);
        if v == 0 || probs.iter().any(|p| p.len() != v) {
            return Err(Error::Contract("table rows must share a non-empty vocabulary".into()));
        }
        Ok(TableModel {
            logp: probs.into_iter().map(|p| p.into_iter().map(f64::ln).collect()).collect(),
        })
    }
}

impl StepModel for TableModel {
    type State = usize;

    fn vocab_size(&self) -> usize {
        self.logp[0].len()
    }

    fn sources(&self) -> usize {
        1
    }

    fn start(&self, rows: &[usize]) -> Result<Vec<usize>> {
        Ok(vec![0; rows.len()])
    }

    fn step(&self, _rows: &[usize], states: &[usize], _prev: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
        let logp = states.iter().map(|&t| self.logp[t.min(self.logp.len() - 1)].clone()).collect();
        Ok((logp, states.iter().map(|t| t + 1).collect()))
    }
}

/// Every prefix of every source gets its own pseudo-random distribution,
/// `softmax(scale · z)` with `z` standard normal.
#[derive(Clone, Debug)]
pub struct RandomTreeModel {
    pub vocab: usize,
    pub sources: usize,
    pub seed: u64,
    pub scale: f64,
}

fn mix(h: u64, x: u64) -> u64 {
    // splitmix64 finalizer over the running hash.
    let mut z = h ^ x.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RandomTreeModel {
    /// Log-probabilities for source `row` after feeding `prefix` (BOS first).
    pub fn distribution(&self, row: usize, prefix: &[usize]) -> Vec<f64> {
        let mut h = mix(self.seed, row as u64);
        for &t in prefix {
            h = mix(h, t as u64 + 1);
        }
        h = mix(h, prefix.len() as u64);
        let mut rng = Rng::seed_from(h);
        let logits: Vec<f64> = (0..self.vocab).map(|_| self.scale * rng.normal()).collect();
        log_softmax(&logits)
    }
}

impl StepModel for RandomTreeModel {
    /// Every token fed in so far, BOS first.
    type State = Vec<usize>;

    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn sources(&self) -> usize {
        self.sources
    }

    fn start(&self, rows: &[usize]) -> Result<Vec<Vec<usize>>> {
        Ok(vec![Vec::new(); rows.len()])
    }

    fn step(&self, rows: &[usize], states: &[Vec<usize>], prev: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<Vec<usize>>)> {
        let mut logp = Vec::with_capacity(rows.len());
        let mut next = Vec::with_capacity(rows.len());
        for ((&r, s), &p) in rows.iter().zip(states).zip(prev) {
            let mut fed = s.clone();
            fed.push(p);
            logp.push(self.distribution(r, &fed));
            next.push(fed);
        }
        Ok((logp, next))
    }
}
