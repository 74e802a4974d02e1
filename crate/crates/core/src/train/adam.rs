use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamSet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = || params.shapes().into_iter().map(Tensor::zeros).collect::<Vec<_>>();
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    /// One bias-corrected Adam update. Nothing is modified if any gradient
    /// is non-finite.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], cfg: &AdamConfig) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Contract(format!(
                "{} gradients and {} moment buffers for {} parameters",
                grads.len(),
                self.m.len(),
                params.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params.at(i).value.shape() {
                return Err(Error::dim("adam", params.at(i).value.shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(params.at(i).name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params.tensor_mut(i).data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j] as f64;
                let mj = cfg.beta1 * m[j] as f64 + (1.0 - cfg.beta1) * gj;
                let vj = cfg.beta2 * v[j] as f64 + (1.0 - cfg.beta2) * gj * gj;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let update = cfg.lr * (mj / c1) / ((vj / c2).sqrt() + cfg.eps);
                p[j] = (p[j] as f64 - update) as f32;
            }
        }
        Ok(())
    }
}
