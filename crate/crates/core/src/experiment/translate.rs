use std::collections::HashMap;
use std::path::Path;

use super::run::{BPE_FILE, SRC_VOCAB_FILE, TGT_VOCAB_FILE};
use crate::data::{preprocess, remove_bpe, BpeModel, FeatureStore, Vocabulary, BOS, EOS, PAD};
use crate::decode::{beam_search, DecodeConfig, Ensemble, NeuralStep};
use crate::error::{Error, Result};
use crate::model::{Model, ParamSet, SourceBatch};
use crate::tensor::FlushSubnormals;
use crate::train::{Checkpoint, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeOptions {
    pub beam: usize,
    pub length_norm: f64,
    pub max_len: usize,
    /// Sentences decoded together.
    pub batch_size: usize,
}

impl DecodeOptions {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        DecodeOptions {
            beam: cfg.beam,
            length_norm: cfg.length_norm,
            max_len: cfg.decode_max_len,
            batch_size: cfg.batch_size,
        }
    }

    fn search(&self) -> DecodeConfig {
        DecodeConfig {
            bos: BOS,
            eos: EOS,
            max_len: self.max_len,
            beam: self.beam,
            length_norm: self.length_norm,
        }
    }
}

/// Decode index sequences with one model or an ensemble sharing vocabularies.
/// Returns target ids without EOS, in input order.
pub fn decode_corpus(
    members: &[(&Model, &ParamSet, Option<&FeatureStore>)],
    sources: &[Vec<usize>],
    opts: &DecodeOptions,
) -> Result<Vec<Vec<usize>>> {
    if members.is_empty() {
        return Err(Error::Config("no model to decode with".into()));
    }
    let _flush = FlushSubnormals::new();
    let cfg = opts.search();
    let mut out = Vec::with_capacity(sources.len());
    let items: Vec<usize> = (0..sources.len()).collect();
    for chunk in items.chunks(opts.batch_size.max(1)) {
        let sents: Vec<Vec<usize>> = chunk.iter().map(|&i| sources[i].clone()).collect();
        let src = SourceBatch::from_sentences(&sents, PAD);
        let mut steps = Vec::with_capacity(members.len());
        for &(model, params, features) in members {
            let feats = match (model.arch().uses_features(), features) {
                (true, Some(f)) => Some(f.batch(chunk)),
                (true, None) => return Err(Error::Config(format!("architecture {} requires image features", model.arch()))),
                (false, _) => None,
            };
            steps.push(NeuralStep::new(model, params, &src, feats.as_ref())?);
        }
        let hyps = if steps.len() == 1 {
            beam_search(&steps[0], &cfg)?
        } else {
            beam_search(&Ensemble::new(steps)?, &cfg)?
        };
        out.extend(hyps.into_iter().map(|h| h.content().to_vec()));
    }
    Ok(out)
}

/// A trained model with the text artifacts of its run.
pub struct Translator {
    pub model: Model,
    pub params: ParamSet,
    pub train: TrainConfig,
    pub bpe: BpeModel,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
}

impl Translator {
    /// Load a checkpoint; the BPE model and vocabularies are read from the
    /// same directory.
    pub fn load(checkpoint: &Path) -> Result<Self> {
        let ck = Checkpoint::load(checkpoint)?;
        let dir = checkpoint.parent().unwrap_or(Path::new("."));
        let model = Model::new(ck.model)?;
        model.check_params(&ck.params)?;
        let t = Translator {
            model,
            params: ck.params,
            train: ck.train,
            bpe: BpeModel::load(&dir.join(BPE_FILE))?,
            src_vocab: Vocabulary::load(&dir.join(SRC_VOCAB_FILE))?,
            tgt_vocab: Vocabulary::load(&dir.join(TGT_VOCAB_FILE))?,
        };
        if t.src_vocab.len() != t.model.config().src_vocab || t.tgt_vocab.len() != t.model.config().tgt_vocab {
            return Err(Error::format("checkpoint", "vocabulary files do not match the model"));
        }
        Ok(t)
    }
}

/// Translate raw source lines. `features` are read as stored and normalized
/// per member according to its training configuration.
pub fn translate(members: &[Translator], lines: &[String], features: Option<&FeatureStore>, opts: &DecodeOptions) -> Result<Vec<String>> {
    let first = members.first().ok_or_else(|| Error::Config("no model to translate with".into()))?;
    for (i, m) in members.iter().enumerate().skip(1) {
        if m.src_vocab != first.src_vocab || m.tgt_vocab != first.tgt_vocab || m.bpe.merges() != first.bpe.merges() {
            return Err(Error::Config(format!("ensemble member {i} was trained with different vocabularies")));
        }
    }
    if let Some(f) = features {
        f.check_aligned(lines.len())?;
    }
    let normalized = match features {
        Some(f) if members.iter().any(|m| m.train.normalize_features) && !f.is_normalized() => {
            let mut n = f.clone();
            n.normalize();
            Some(n)
        }
        _ => None,
    };
    let mut cache = HashMap::new();
    let max_len = first.train.max_len;
    let sources: Vec<Vec<usize>> = lines
        .iter()
        .map(|l| {
            let mut ids = first.src_vocab.encode(&first.bpe.apply_cached(&preprocess(l), &mut cache));
            ids.truncate(max_len);
            ids
        })
        .collect();
    let bound: Vec<(&Model, &ParamSet, Option<&FeatureStore>)> = members
        .iter()
        .map(|m| {
            let f = if m.train.normalize_features { normalized.as_ref().or(features) } else { features };
            (&m.model, &m.params, f)
        })
        .collect();
    let ids = decode_corpus(&bound, &sources, opts)?;
    Ok(ids.iter().map(|s| remove_bpe(&first.tgt_vocab.decode(s))).collect())
}
