use super::{log_softmax, StepModel};
use crate::error::Result;
use crate::model::{Encoded, Model, ParamSet, SourceBatch};
use crate::tensor::Tensor;

/// A trained model bound to one encoded source batch.
pub struct NeuralStep<'a> {
    model: &'a Model,
    params: &'a ParamSet,
    enc: Encoded,
}

impl<'a> NeuralStep<'a> {
    pub fn new(model: &'a Model, params: &'a ParamSet, src: &SourceBatch, features: Option<&Tensor>) -> Result<Self> {
        model.check_params(params)?;
        let enc = model.encode(params, src, features)?;
        Ok(NeuralStep { model, params, enc })
    }

    pub fn encoded(&self) -> &Encoded {
        &self.enc
    }
}

impl StepModel for NeuralStep<'_> {
    /// Second decoder layer state `h2`.
    type State = Vec<f32>;

    fn vocab_size(&self) -> usize {
        self.model.config().tgt_vocab
    }

    fn sources(&self) -> usize {
        self.enc.batch_size()
    }

    fn start(&self, rows: &[usize]) -> Result<Vec<Vec<f32>>> {
        Ok(vec![vec![0.0; self.model.config().hidden]; rows.len()])
    }

    fn step(&self, rows: &[usize], states: &[Vec<f32>], prev: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f32>>)> {
        let h = self.model.config().hidden;
        let h2 = Tensor::new(&[states.len(), h], states.concat())?;
        let (logits, h2) = self.model.decode_step(self.params, &self.enc, rows, &h2, prev)?;
        let v = self.vocab_size();
        let logp = logits
            .data()
            .chunks(v)
            .map(|row| log_softmax(&row.iter().map(|&x| x as f64).collect::<Vec<_>>()))
            .collect();
        let next = h2.data().chunks(h).map(<[f32]>::to_vec).collect();
        Ok((logp, next))
    }
}
