use super::StepModel;
use crate::error::{Error, Result};

/// Arithmetic mean of member probabilities; every member keeps its own state.
pub struct Ensemble<M> {
    members: Vec<M>,
}

impl<M: StepModel> Ensemble<M> {
    pub fn new(members: Vec<M>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Config("an ensemble needs at least one model".into()))?;
        let (v, n) = (first.vocab_size(), first.sources());
        for (i, m) in members.iter().enumerate() {
            if m.vocab_size() != v {
                return Err(Error::Config(format!(
                    "ensemble member {i} has a vocabulary of {} but member 0 has {v}",
                    m.vocab_size()
                )));
            }
            if m.sources() != n {
                return Err(Error::Contract(format!("ensemble member {i} sees a different source batch")));
            }
        }
        Ok(Ensemble { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

impl<M: StepModel> StepModel for Ensemble<M> {
    type State = Vec<M::State>;

    fn vocab_size(&self) -> usize {
        self.members[0].vocab_size()
    }

    fn sources(&self) -> usize {
        self.members[0].sources()
    }

    fn start(&self, rows: &[usize]) -> Result<Vec<Self::State>> {
        let mut out: Vec<Self::State> = vec![Vec::with_capacity(self.members.len()); rows.len()];
        for m in &self.members {
            for (slot, s) in out.iter_mut().zip(m.start(rows)?) {
                slot.push(s);
            }
        }
        Ok(out)
    }

    fn step(&self, rows: &[usize], states: &[Self::State], prev: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<Self::State>)> {
        let n = rows.len();
        let k = self.members.len() as f64;
        let mut probs = vec![vec![0.0; self.vocab_size()]; n];
        let mut next: Vec<Self::State> = vec![Vec::with_capacity(self.members.len()); n];
        for (j, m) in self.members.iter().enumerate() {
            let own: Vec<M::State> = states.iter().map(|s| s[j].clone()).collect();
            let (logp, succ) = m.step(rows, &own, prev)?;
            for (acc, row) in probs.iter_mut().zip(&logp) {
                for (a, &lp) in acc.iter_mut().zip(row) {
                    *a += lp.exp();
                }
            }
            for (slot, s) in next.iter_mut().zip(succ) {
                slot.push(s);
            }
        }
        let logp = probs
            .into_iter()
            .map(|row| row.into_iter().map(|p| (p / k).ln()).collect())
            .collect();
        Ok((logp, next))
    }
}
