use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Right-padded source token indices, row-major `[B, S]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceBatch {
    pub tokens: Vec<usize>,
    pub lengths: Vec<usize>,
    pub max_len: usize,
}

impl SourceBatch {
    /// Pad `sentences` with `pad` to the longest one.
    pub fn from_sentences(sentences: &[Vec<usize>], pad: usize) -> Self {
        let max_len = sentences.iter().map(Vec::len).max().unwrap_or(0);
        let mut tokens = Vec::with_capacity(sentences.len() * max_len);
        for s in sentences {
            tokens.extend_from_slice(s);
            tokens.extend(std::iter::repeat_n(pad, max_len - s.len()));
        }
        SourceBatch {
            tokens,
            lengths: sentences.iter().map(Vec::len).collect(),
            max_len,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    /// `B·S` flags, true on real tokens.
    pub fn mask(&self) -> Vec<bool> {
        self.lengths
            .iter()
            .flat_map(|&l| (0..self.max_len).map(move |t| t < l))
            .collect()
    }

    pub(crate) fn validate(&self, vocab: usize) -> Result<()> {
        if self.lengths.is_empty() || self.tokens.len() != self.lengths.len() * self.max_len {
            return Err(Error::dim("source batch", &[self.lengths.len(), self.max_len], &[self.tokens.len()]));
        }
        if self.lengths.iter().any(|&l| l == 0 || l > self.max_len) {
            return Err(Error::Contract("source sentence length outside [1, max_len]".into()));
        }
        if let Some(&bad) = self.tokens.iter().find(|&&t| t >= vocab) {
            return Err(Error::Contract(format!("source token {bad} outside vocabulary of {vocab}")));
        }
        Ok(())
    }
}

/// Teacher-forcing pairs, row-major `[B, T]`: `inputs` start with BOS and
/// `outputs` end with EOS.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TargetBatch {
    pub inputs: Vec<usize>,
    pub outputs: Vec<usize>,
    pub lengths: Vec<usize>,
    pub max_len: usize,
}

impl TargetBatch {
    /// Frame each sentence as `BOS y` → `y EOS` and pad.
    pub fn from_sentences(sentences: &[Vec<usize>], bos: usize, eos: usize, pad: usize) -> Self {
        let max_len = sentences.iter().map(|s| s.len() + 1).max().unwrap_or(0);
        let mut inputs = Vec::with_capacity(sentences.len() * max_len);
        let mut outputs = Vec::with_capacity(sentences.len() * max_len);
        for s in sentences {
            inputs.push(bos);
            inputs.extend_from_slice(s);
            outputs.extend_from_slice(s);
            outputs.push(eos);
            let fill = max_len - s.len() - 1;
            inputs.extend(std::iter::repeat_n(pad, fill));
            outputs.extend(std::iter::repeat_n(pad, fill));
        }
        TargetBatch {
            inputs,
            outputs,
            lengths: sentences.iter().map(|s| s.len() + 1).collect(),
            max_len,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub(crate) fn validate(&self, vocab: usize) -> Result<()> {
        let n = self.lengths.len() * self.max_len;
        if self.lengths.is_empty() || self.inputs.len() != n || self.outputs.len() != n {
            return Err(Error::dim("target batch", &[self.lengths.len(), self.max_len], &[self.inputs.len()]));
        }
        if self.lengths.iter().any(|&l| l == 0 || l > self.max_len) {
            return Err(Error::Contract("target sentence length outside [1, max_len]".into()));
        }
        if let Some(&bad) = self.inputs.iter().chain(&self.outputs).find(|&&t| t >= vocab) {
            return Err(Error::Contract(format!("target token {bad} outside vocabulary of {vocab}")));
        }
        Ok(())
    }
}

/// A training batch with optional positions-major features `[B, P, C]`.
#[derive(Clone, Debug)]
pub struct Batch<T: Real = f32> {
    pub src: SourceBatch,
    pub tgt: TargetBatch,
    pub features: Option<Tensor<T>>,
}

impl<T: Real> Batch<T> {
    pub fn cast<U: Real>(&self) -> Batch<U> {
        Batch {
            src: self.src.clone(),
            tgt: self.tgt.clone(),
            features: self.features.as_ref().map(Tensor::cast),
        }
    }
}
