use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSummary {
    pub name: String,
    pub scores: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n − 1); zero for a single run.
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub a: String,
    pub b: String,
    pub p_value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub systems: Vec<SystemSummary>,
    pub tests: Vec<PairTest>,
}

fn summarize(name: &str, scores: &[f64]) -> Result<SystemSummary> {
    if scores.is_empty() {
        return Err(Error::Config(format!("system `{name}` has no runs")));
    }
    // Sum in sorted order so the result does not depend on seed order.
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let std = if sorted.len() > 1 {
        (sorted.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        log::warn!("system `{name}` has a single run; reporting a standard deviation of 0");
        0.0
    };
    Ok(SystemSummary {
        name: name.to_string(),
        scores: scores.to_vec(),
        mean,
        std,
    })
}

/// Mean and sample standard deviation per system.
pub fn report_runs(systems: &[(String, Vec<f64>)]) -> Result<EvalReport> {
    Ok(EvalReport {
        systems: systems.iter().map(|(n, s)| summarize(n, s)).collect::<Result<_>>()?,
        tests: Vec::new(),
    })
}

impl SystemSummary {
    /// `mean ± std` with one decimal.
    pub fn cell(&self) -> String {
        format!("{:.1} ± {:.1}", self.mean, self.std)
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.systems.iter().map(|s| s.name.chars().count()).max().unwrap_or(6).max(6);
        writeln!(f, "{:<width$}  {:>5}  BLEU", "system", "runs")?;
        for s in &self.systems {
            writeln!(f, "{:<width$}  {:>5}  {}", s.name, s.scores.len(), s.cell())?;
        }
        for t in &self.tests {
            writeln!(f, "p({} vs {}) = {:.4}", t.a, t.b, t.p_value)?;
        }
        Ok(())
    }
}
