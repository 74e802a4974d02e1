use serde::{Deserialize, Serialize};

/// Patience counter over a metric where larger is better.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub patience: usize,
    pub best: Option<f64>,
    /// Evaluation index (0-based) that produced `best`.
    pub best_at: Option<usize>,
    pub since_best: usize,
    pub evaluations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStop {
    pub fn new(patience: usize) -> Self {
        EarlyStop {
            patience,
            best: None,
            best_at: None,
            since_best: 0,
            evaluations: 0,
        }
    }

    /// Record one evaluation. Only a strictly larger value counts as progress.
    pub fn update(&mut self, metric: f64) -> StopDecision {
        let improved = self.best.is_none_or(|b| metric > b);
        if improved {
            self.best = Some(metric);
            self.best_at = Some(self.evaluations);
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.evaluations += 1;
        StopDecision {
            improved,
            stop: self.should_stop(),
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }
}
