use std::collections::HashMap;
use std::path::{Path, PathBuf};

use super::layout::split_paths;
use super::translate::{decode_corpus, DecodeOptions};
use crate::data::{preprocess, remove_bpe, BpeModel, FeatureStore, IndexedCorpus, ParallelCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::bleu_corpus;
use crate::model::{Model, ParamSet};
use crate::train::{fit, Checkpoint, FitOutcome, TrainConfig, Trainer, LAST_CHECKPOINT};

pub const BPE_FILE: &str = "bpe.codes";
pub const SRC_VOCAB_FILE: &str = "vocab.src";
pub const TGT_VOCAB_FILE: &str = "vocab.tgt";
pub const CONFIG_SNAPSHOT: &str = "config.json";

/// Read and normalize one split of a data directory.
pub fn load_split(dir: &Path, split: &str) -> Result<ParallelCorpus> {
    let p = split_paths(dir, split);
    let corpus = ParallelCorpus::load(&p.src, &p.tgt)?;
    Ok(corpus.map(preprocess))
}

/// Load a feature file, applying the configured normalization and width check.
pub fn load_features(path: &Path, cfg: &TrainConfig) -> Result<FeatureStore> {
    let store = FeatureStore::load(path, cfg.normalize_features)?;
    if let Some(w) = cfg.feature_width {
        if store.width() != w {
            return Err(Error::Config(format!(
                "{} has width {} but feature_width = {w}",
                path.display(),
                store.width()
            )));
        }
    }
    Ok(store)
}

/// Everything derived from a data directory before training.
pub struct Prepared {
    pub bpe: BpeModel,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub train: IndexedCorpus,
    pub dev: IndexedCorpus,
    /// Normalized dev targets, word level.
    pub dev_refs: Vec<String>,
    pub train_features: Option<FeatureStore>,
    pub dev_features: Option<FeatureStore>,
}

impl Prepared {
    pub fn feat_channels(&self) -> usize {
        self.train_features.as_ref().map_or(0, FeatureStore::channels)
    }

    pub fn save_artifacts(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.bpe.save(&dir.join(BPE_FILE))?;
        self.src_vocab.save(&dir.join(SRC_VOCAB_FILE))?;
        self.tgt_vocab.save(&dir.join(TGT_VOCAB_FILE))?;
        Ok(())
    }
}

/// Joint BPE and vocabularies from the training split, then index train and
/// dev. Feature files are loaded when present and required for ma/fa.
pub fn prepare(cfg: &TrainConfig, data_dir: &Path) -> Result<Prepared> {
    let train_text = load_split(data_dir, "train")?;
    let dev_text = load_split(data_dir, "dev")?;
    let bpe = BpeModel::learn_joint(&[&train_text.src, &train_text.tgt], cfg.bpe_merges)?;
    let mut cache = HashMap::new();
    let train_bpe = train_text.map(|l| bpe.apply_cached(l, &mut cache));
    let dev_bpe = dev_text.map(|l| bpe.apply_cached(l, &mut cache));
    let src_vocab = Vocabulary::build(train_bpe.src.iter().map(String::as_str));
    let tgt_vocab = Vocabulary::build(train_bpe.tgt.iter().map(String::as_str));
    let train = IndexedCorpus::encode(&train_bpe, &src_vocab, &tgt_vocab, cfg.max_len);
    let dev = IndexedCorpus::encode(&dev_bpe, &src_vocab, &tgt_vocab, cfg.max_len);
    let tf_path = split_paths(data_dir, "train").features;
    if cfg.arch.uses_features() && !tf_path.exists() {
        return Err(Error::Config(format!("architecture {} requires {}", cfg.arch, tf_path.display())));
    }
    let (train_features, dev_features) = if tf_path.exists() {
        let tf = load_features(&split_paths(data_dir, "train").features, cfg)?;
        let df = load_features(&split_paths(data_dir, "dev").features, cfg)?;
        tf.check_aligned(train.len())?;
        df.check_aligned(dev.len())?;
        if tf.channels() != df.channels() || tf.width() != df.width() {
            return Err(Error::Alignment("train and dev feature maps differ in shape".into()));
        }
        (Some(tf), Some(df))
    } else {
        (None, None)
    };
    Ok(Prepared {
        bpe,
        src_vocab,
        tgt_vocab,
        train,
        dev,
        dev_refs: dev_text.tgt,
        train_features,
        dev_features,
    })
}

/// Corpus BLEU of `sources` decoded with `opts` against word-level references.
pub fn dev_bleu(
    model: &Model,
    params: &ParamSet,
    sources: &[Vec<usize>],
    features: Option<&FeatureStore>,
    tgt_vocab: &Vocabulary,
    refs: &[String],
    opts: &DecodeOptions,
) -> Result<f64> {
    let ids = decode_corpus(&[(model, params, features)], sources, opts)?;
    let hyps: Vec<String> = ids.iter().map(|s| remove_bpe(&tgt_vocab.decode(s))).collect();
    bleu_corpus(&hyps, refs)
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub outcome: FitOutcome,
    /// True when the run directory already held a finished run.
    pub skipped: bool,
}

/// Train one configuration into `run_dir`, resuming from `last.ckpt` when a
/// compatible one is present. Dev evaluation is greedy.
pub fn train_run(cfg: &TrainConfig, data_dir: &Path, run_dir: &Path, prepared: Option<&Prepared>) -> Result<RunSummary> {
    cfg.validate()?;
    let owned;
    let prep = match prepared {
        Some(p) => p,
        None => {
            owned = prepare(cfg, data_dir)?;
            &owned
        }
    };
    std::fs::create_dir_all(run_dir)?;
    let last = run_dir.join(LAST_CHECKPOINT);
    let mut trainer = if last.exists() {
        let ck = Checkpoint::load(&last)?;
        if &ck.train != cfg {
            return Err(Error::Config(format!("{} was trained with a different configuration", run_dir.display())));
        }
        log::info!("resuming {} after epoch {}", run_dir.display(), ck.progress.epoch);
        Trainer::resume(ck)?
    } else {
        let mc = cfg.model_config(prep.src_vocab.len(), prep.tgt_vocab.len(), prep.feat_channels());
        Trainer::new(cfg.clone(), mc)?
    };
    let skipped = trainer.finished();
    prep.save_artifacts(run_dir)?;
    let snapshot = serde_json::to_string_pretty(cfg).map_err(|e| Error::Contract(e.to_string()))?;
    std::fs::write(run_dir.join(CONFIG_SNAPSHOT), snapshot + "\n")?;
    log::info!("run {} arch {} seed {}", run_dir.display(), cfg.arch, cfg.seed);

    let greedy = DecodeOptions {
        beam: 1,
        ..DecodeOptions::from_config(cfg)
    };
    let outcome = fit(
        &mut trainer,
        &prep.train,
        prep.train_features.as_ref(),
        Some(run_dir),
        |model, params| dev_bleu(model, params, &prep.dev.src, prep.dev_features.as_ref(), &prep.tgt_vocab, &prep.dev_refs, &greedy),
    )?;
    Ok(RunSummary {
        dir: run_dir.to_path_buf(),
        outcome,
        skipped,
    })
}
