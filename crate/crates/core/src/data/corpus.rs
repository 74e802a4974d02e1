use std::path::Path;

use super::features::FeatureStore;
use super::vocab::{Vocabulary, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::model::{Batch, SourceBatch, TargetBatch};
use crate::tensor::Rng;

/// Default cap on sentence length in subword tokens.
pub const MAX_LEN: usize = 100;

/// Aligned source and target lines of one split.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = std::fs::read(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Encoding(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(str::to_string).collect())
}

pub fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = String::with_capacity(lines.iter().map(|l| l.len() + 1).sum());
    for l in lines {
        text.push_str(l);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

impl ParallelCorpus {
    pub fn new(src: Vec<String>, tgt: Vec<String>) -> Result<Self> {
        let c = ParallelCorpus { src, tgt };
        c.validate()?;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.src.len() != self.tgt.len() {
            return Err(Error::Alignment(format!(
                "{} source lines but {} target lines",
                self.src.len(),
                self.tgt.len()
            )));
        }
        for (side, lines) in [("source", &self.src), ("target", &self.tgt)] {
            if let Some(i) = lines.iter().position(|l| l.split_whitespace().next().is_none()) {
                return Err(Error::format("corpus", format!("empty {side} sentence on line {}", i + 1)));
            }
        }
        Ok(())
    }

    pub fn load(src: &Path, tgt: &Path) -> Result<Self> {
        Self::new(read_lines(src)?, read_lines(tgt)?)
    }

    pub fn save(&self, src: &Path, tgt: &Path) -> Result<()> {
        write_lines(src, &self.src)?;
        write_lines(tgt, &self.tgt)
    }

    pub fn map(&self, mut f: impl FnMut(&str) -> String) -> Self {
        ParallelCorpus {
            src: self.src.iter().map(|l| f(l)).collect(),
            tgt: self.tgt.iter().map(|l| f(l)).collect(),
        }
    }
}

/// A corpus mapped to vocabulary indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexedCorpus {
    pub src: Vec<Vec<usize>>,
    pub tgt: Vec<Vec<usize>>,
}

fn truncated(mut ids: Vec<usize>, max_len: usize, side: &str, line: usize) -> Vec<usize> {
    if ids.len() > max_len {
        log::warn!("{side} sentence {} has {} tokens, truncating to {max_len}", line + 1, ids.len());
        ids.truncate(max_len);
    }
    ids
}

impl IndexedCorpus {
    /// Encode subword lines; longer sentences are truncated to `max_len`.
    pub fn encode(corpus: &ParallelCorpus, src_vocab: &Vocabulary, tgt_vocab: &Vocabulary, max_len: usize) -> Self {
        IndexedCorpus {
            src: corpus
                .src
                .iter()
                .enumerate()
                .map(|(i, l)| truncated(src_vocab.encode(l), max_len, "source", i))
                .collect(),
            tgt: corpus
                .tgt
                .iter()
                .enumerate()
                .map(|(i, l)| truncated(tgt_vocab.encode(l), max_len, "target", i))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn batch(&self, items: &[usize], features: Option<&FeatureStore>) -> Batch {
        let src: Vec<Vec<usize>> = items.iter().map(|&i| self.src[i].clone()).collect();
        let tgt: Vec<Vec<usize>> = items.iter().map(|&i| self.tgt[i].clone()).collect();
        Batch {
            src: SourceBatch::from_sentences(&src, PAD),
            tgt: TargetBatch::from_sentences(&tgt, BOS, EOS, PAD),
            features: features.map(|f| f.batch(items)),
        }
    }
}

/// Item indices grouped into batches, shuffled when `rng` is given.
pub fn batch_order(n: usize, batch_size: usize, rng: Option<&mut Rng>) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(rng) = rng {
        rng.shuffle(&mut order);
    }
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}
