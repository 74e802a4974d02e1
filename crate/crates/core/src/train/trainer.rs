use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::checkpoint::{Checkpoint, Progress};
use super::config::TrainConfig;
use super::early::{EarlyStop, StopDecision};
use super::init::init_params;
use super::l2_penalty;
use crate::data::{batch_order, FeatureStore, IndexedCorpus};
use crate::error::{Error, Result};
use crate::model::{Arch, Batch, Model, ModelConfig, ParamSet};
use crate::tensor::{global_norm, global_norm_clip, FlushSubnormals, Rng, Tape};

impl TrainConfig {
    pub fn model_config(&self, src_vocab: usize, tgt_vocab: usize, feat_channels: usize) -> ModelConfig {
        ModelConfig {
            arch: self.arch,
            src_vocab,
            tgt_vocab,
            emb_dim: self.emb_dim,
            hidden: self.hidden,
            enc_layers: self.enc_layers,
            feat_channels: if self.arch.uses_features() { feat_channels } else { 0 },
            dropout_emb: self.dropout_emb,
            dropout_enc: self.dropout_enc,
            dropout_out: self.dropout_out,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Mean token NLL of the batch, without the penalty.
    pub loss: f64,
    pub penalty: f64,
    pub tokens: usize,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub clipped_norm: f64,
    pub vis_pre_tanh_mean_abs: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Token-weighted mean NLL over the epoch.
    pub loss: f64,
    pub steps: usize,
    pub grad_norm_mean: f64,
    pub grad_norm_max: f64,
    /// Largest post-clip norm seen.
    pub clipped_norm_max: f64,
    pub vis_pre_tanh_mean_abs: Option<f64>,
}

/// One line of the metrics file. Only `epoch`, `loss` and `dev_bleu` are
/// required when reading.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub dev_bleu: f64,
    #[serde(default)]
    pub grad_norm_mean: f64,
    #[serde(default)]
    pub grad_norm_max: f64,
    #[serde(default)]
    pub vis_pre_tanh_mean_abs: Option<f64>,
    #[serde(default)]
    pub improved: bool,
    #[serde(default)]
    pub stop: bool,
}

/// Model, parameters, optimizer and loop counters of one run.
pub struct Trainer {
    cfg: TrainConfig,
    model: Model,
    params: ParamSet,
    adam: AdamState,
    rng: Rng,
    early: EarlyStop,
    epoch: usize,
}

impl Trainer {
    /// Fresh run; the generator seeded with `cfg.seed` drives initialization,
    /// shuffling and dropout in that order.
    pub fn new(cfg: TrainConfig, model_cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        if model_cfg.arch != cfg.arch {
            return Err(Error::Config(format!("model is {} but the run is configured for {}", model_cfg.arch, cfg.arch)));
        }
        let model = Model::new(model_cfg)?;
        let mut rng = Rng::seed_from(cfg.seed);
        let params = init_params(&model, &mut rng);
        let adam = AdamState::new(&params);
        let early = EarlyStop::new(cfg.patience);
        Ok(Trainer {
            cfg,
            model,
            params,
            adam,
            rng,
            early,
            epoch: 0,
        })
    }

    pub fn resume(ck: Checkpoint) -> Result<Self> {
        let model = Model::new(ck.model)?;
        model.check_params(&ck.params)?;
        let mut early = EarlyStop::new(ck.train.patience);
        early.best = ck.progress.best_metric();
        early.best_at = ck.progress.best_epoch.map(|e| e - 1);
        early.since_best = ck.progress.epochs_since_best;
        early.evaluations = ck.progress.epoch;
        Ok(Trainer {
            cfg: ck.train,
            model,
            params: ck.params,
            adam: ck.adam,
            rng: Rng::from_state(ck.progress.rng),
            early,
            epoch: ck.progress.epoch,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            train: self.cfg.clone(),
            model: self.model.config().clone(),
            progress: Progress {
                epoch: self.epoch,
                rng: self.rng.state(),
                best_metric_bits: self.early.best.map(f64::to_bits),
                best_epoch: self.early.best_at.map(|e| e + 1),
                epochs_since_best: self.early.since_best,
                adam_step: self.adam.step,
            },
            params: self.params.clone(),
            adam: self.adam.clone(),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn early(&self) -> &EarlyStop {
        &self.early
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// forward → loss + L2 → backward → clip → Adam.
    pub fn step(&mut self, batch: &Batch) -> Result<StepStats> {
        let _flush = FlushSubnormals::new();
        let mut tape = Tape::new();
        let vars = self.model.bind(&mut tape, &self.params)?;
        let out = self.model.loss(&mut tape, &vars, batch, &mut self.rng, true)?;
        let penalty = l2_penalty(&mut tape, &vars.all, &self.params, self.cfg.l2_factor)?;
        let total = match penalty {
            Some(p) => tape.add(out.loss, p)?,
            None => out.loss,
        };
        let loss = tape.value(out.loss).item() as f64;
        let penalty = penalty.map_or(0.0, |p| tape.value(p).item() as f64);
        let mut grads = tape.backward(total)?.into_param_grads(&self.params.shapes());
        // Release the tape's references so the update happens in place.
        drop(vars);
        drop(tape);
        let grad_norm = global_norm(&grads);
        global_norm_clip(&mut grads, self.cfg.clip_norm);
        let clipped_norm = global_norm(&grads);
        self.adam.step(&mut self.params, &grads, &self.cfg.adam())?;
        Ok(StepStats {
            loss,
            penalty,
            tokens: out.tokens,
            grad_norm,
            clipped_norm,
            vis_pre_tanh_mean_abs: out.diagnostics.vis_pre_tanh_mean_abs,
        })
    }

    fn check_inputs(&self, data: &IndexedCorpus, features: Option<&FeatureStore>) -> Result<()> {
        if data.is_empty() {
            return Err(Error::Config("training corpus is empty".into()));
        }
        match (self.model.arch().uses_features(), features) {
            (true, None) => Err(Error::Config(format!("architecture {} requires image features", self.model.arch()))),
            (true, Some(f)) => {
                f.check_aligned(data.len())?;
                if f.channels() != self.model.config().feat_channels {
                    return Err(Error::Config(format!(
                        "features have {} channels but the model expects {}",
                        f.channels(),
                        self.model.config().feat_channels
                    )));
                }
                Ok(())
            }
            (false, _) => Ok(()),
        }
    }

    /// One shuffled pass over `data`.
    pub fn train_epoch(&mut self, data: &IndexedCorpus, features: Option<&FeatureStore>) -> Result<EpochStats> {
        self.check_inputs(data, features)?;
        let features = features.filter(|_| self.model.arch() != Arch::Baseline);
        let order = batch_order(data.len(), self.cfg.batch_size, Some(&mut self.rng));
        let mut weighted = 0.0;
        let mut tokens = 0usize;
        let (mut norm_sum, mut norm_max, mut clipped_max) = (0.0, 0.0f64, 0.0f64);
        let (mut pre_sum, mut pre_n) = (0.0, 0usize);
        for items in &order {
            let batch = data.batch(items, features);
            let s = self.step(&batch)?;
            weighted += s.loss * s.tokens as f64;
            tokens += s.tokens;
            norm_sum += s.grad_norm;
            norm_max = norm_max.max(s.grad_norm);
            clipped_max = clipped_max.max(s.clipped_norm);
            if let Some(p) = s.vis_pre_tanh_mean_abs {
                pre_sum += p;
                pre_n += 1;
            }
        }
        self.epoch += 1;
        Ok(EpochStats {
            epoch: self.epoch,
            loss: weighted / tokens as f64,
            steps: order.len(),
            grad_norm_mean: norm_sum / order.len() as f64,
            grad_norm_max: norm_max,
            clipped_norm_max: clipped_max,
            vis_pre_tanh_mean_abs: (pre_n > 0).then(|| pre_sum / pre_n as f64),
        })
    }

    /// Record the dev metric of the epoch just finished.
    pub fn observe(&mut self, metric: f64) -> Result<StopDecision> {
        if !metric.is_finite() {
            return Err(Error::Contract(format!("dev metric {metric} is not finite")));
        }
        Ok(self.early.update(metric))
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.cfg.max_epochs || self.early.should_stop()
    }
}

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const METRICS_FILE: &str = "metrics.jsonl";

/// Summary of [`fit`].
#[derive(Clone, Debug, PartialEq)]
pub struct FitOutcome {
    pub history: Vec<EpochRecord>,
    pub best_metric: Option<f64>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochRecord>> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::format("metrics line", format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

fn write_metrics(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut f = File::create(path)?;
    for r in records {
        writeln!(f, "{}", serde_json::to_string(r).expect("records serialize"))?;
    }
    Ok(())
}

/// Train until `max_epochs` or early stopping, evaluating once per epoch.
///
/// With `out_dir`, every epoch appends to `metrics.jsonl` and rewrites
/// `last.ckpt`; improvements also rewrite `best.ckpt`. A trainer resumed from
/// `last.ckpt` continues the same trajectory.
pub fn fit(
    trainer: &mut Trainer,
    data: &IndexedCorpus,
    features: Option<&FeatureStore>,
    out_dir: Option<&Path>,
    mut evaluate: impl FnMut(&Model, &ParamSet) -> Result<f64>,
) -> Result<FitOutcome> {
    let mut history = Vec::new();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let metrics = dir.join(METRICS_FILE);
        if trainer.epoch() > 0 && metrics.exists() {
            history = read_metrics(&metrics)?;
            history.retain(|r| r.epoch <= trainer.epoch());
        }
        write_metrics(&metrics, &history)?;
    }
    while !trainer.finished() {
        let stats = trainer.train_epoch(data, features)?;
        let bleu = evaluate(trainer.model(), trainer.params())?;
        let decision = trainer.observe(bleu)?;
        log::info!(
            "epoch {} loss {:.4} dev_bleu {:.2} grad_norm {:.3}{}{}",
            stats.epoch,
            stats.loss,
            bleu,
            stats.grad_norm_mean,
            if decision.improved { " best" } else { "" },
            if decision.stop { " early-stop" } else { "" },
        );
        let record = EpochRecord {
            epoch: stats.epoch,
            loss: stats.loss,
            dev_bleu: bleu,
            grad_norm_mean: stats.grad_norm_mean,
            grad_norm_max: stats.grad_norm_max,
            vis_pre_tanh_mean_abs: stats.vis_pre_tanh_mean_abs,
            improved: decision.improved,
            stop: decision.stop,
        };
        if let Some(dir) = out_dir {
            let mut f = OpenOptions::new().append(true).open(dir.join(METRICS_FILE))?;
            writeln!(f, "{}", serde_json::to_string(&record).expect("records serialize"))?;
            let ck = trainer.checkpoint();
            if decision.improved {
                ck.save(&dir.join(BEST_CHECKPOINT))?;
            }
            ck.save(&dir.join(LAST_CHECKPOINT))?;
        }
        history.push(record);
    }
    Ok(FitOutcome {
        history,
        best_metric: trainer.early().best,
        best_epoch: trainer.early().best_at.map(|e| e + 1),
        stopped_early: trainer.early().should_stop(),
    })
}
