use crate::model::{Model, ParamSet, ParamSpec};
use crate::tensor::{Rng, Tensor};

/// Fan-in of a parameter stored as `[in, out]`. Embedding tables use their
/// width, since each lookup reads one row.
fn fan_in(spec: &ParamSpec) -> usize {
    if spec.name.ends_with("_emb") {
        spec.shape[1]
    } else {
        spec.shape[0]
    }
}

/// He initialization: weights from `N(0, 2 / fan_in)`, biases zero.
pub fn he_init(spec: &ParamSpec, rng: &mut Rng) -> Tensor {
    if spec.is_bias {
        return Tensor::zeros(&spec.shape);
    }
    let std = (2.0 / fan_in(spec) as f64).sqrt();
    let n = spec.shape.iter().product();
    Tensor::new(&spec.shape, (0..n).map(|_| (std * rng.normal()) as f32).collect()).expect("shape matches count")
}

pub fn init_params(model: &Model, rng: &mut Rng) -> ParamSet {
    ParamSet::from_specs(model.specs(), |s| he_init(s, rng)).expect("specs are unique and well shaped")
}
