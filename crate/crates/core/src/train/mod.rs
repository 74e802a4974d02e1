//! Optimization: initialization, Adam, L2 regularization, early stopping,
//! checkpoints and the epoch loop.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod early;
pub mod init;
mod trainer;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, Progress, CHECKPOINT_MAGIC};
pub use config::{parse_settings, read_settings, Setting, TrainConfig};
pub use early::{EarlyStop, StopDecision};
pub use init::{he_init, init_params};
pub use trainer::{
    fit, read_metrics, EpochRecord, EpochStats, FitOutcome, StepStats, Trainer, BEST_CHECKPOINT, LAST_CHECKPOINT, METRICS_FILE,
};

use crate::error::Result;
use crate::model::{ParamSet, ParamVars};
use crate::tensor::{Real, Tape, Var};

/// `λ Σ ‖W‖²` over every non-bias parameter, or `None` when `λ = 0`.
pub fn l2_penalty<T: Real>(tape: &mut Tape<T>, vars: &ParamVars, params: &ParamSet<T>, lambda: f64) -> Result<Option<Var>> {
    if lambda == 0.0 {
        return Ok(None);
    }
    let mut total: Option<Var> = None;
    for (i, p) in params.iter().enumerate() {
        if p.is_bias {
            continue;
        }
        let sq = tape.sum_squares(vars[i]);
        total = Some(match total {
            Some(t) => tape.add(t, sq)?,
            None => sq,
        });
    }
    Ok(total.map(|t| tape.scale(t, T::lit(lambda))))
}
