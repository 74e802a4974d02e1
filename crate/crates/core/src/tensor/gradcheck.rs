//! Central finite-difference checks at 64-bit precision.
//!
//! The numeric side only ever evaluates the forward function, so it is
//! independent of every backward rule it is used to verify.

use super::{Rng, Tape, Tensor, Var};
use crate::error::Result;

/// Largest discrepancy found by [`check_inputs`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_error: f64,
    pub checked: usize,
}

/// `|analytic − numeric| / max(|numeric|, 1)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

/// Compare analytic gradients of a scalar function with central differences.
///
/// `f` builds the graph on a fresh tape from differentiable leaves holding
/// `inputs` and returns the scalar output. Every coordinate is checked when
/// `samples_per_input` is `None`, otherwise that many random coordinates.
pub fn check_inputs<F>(
    inputs: &[Tensor<f64>],
    f: F,
    step: f64,
    samples_per_input: Option<(usize, &mut Rng)>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut coords: Vec<(usize, usize)> = Vec::new();
    match samples_per_input {
        None => {
            for (i, t) in inputs.iter().enumerate() {
                coords.extend((0..t.numel()).map(|j| (i, j)));
            }
        }
        Some((n, rng)) => {
            for (i, t) in inputs.iter().enumerate() {
                coords.extend((0..n.min(t.numel())).map(|_| (i, rng.below(t.numel()))));
            }
        }
    }

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut max_error = 0.0f64;
    for &(i, j) in &coords {
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + step;
        let up = eval(&work)?;
        work[i].data_mut()[j] = orig - step;
        let down = eval(&work)?;
        work[i].data_mut()[j] = orig;
        let numeric = (up - down) / (2.0 * step);
        let analytic = grads.get(vars[i]).map(|g| g.data()[j]).unwrap_or(0.0);
        max_error = max_error.max(relative_error(analytic, numeric));
    }
    Ok(GradCheckReport {
        max_error,
        checked: coords.len(),
    })
}
