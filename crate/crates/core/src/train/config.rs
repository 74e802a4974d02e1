//! Flat `key = value` configuration files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SynthSpec;
use crate::error::{Error, Result};
use crate::model::Arch;

/// A parsed `key = value` line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Setting {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_settings(text: &str) -> Result<Vec<Setting>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        out.push(Setting {
            key: key.to_string(),
            value: value.to_string(),
            line: i + 1,
        });
    }
    Ok(out)
}

pub fn read_settings(path: &Path) -> Result<Vec<Setting>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_settings(&text)
}

fn at_line(e: Error, line: usize) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("line {line}: {m}")),
        other => other,
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid value `{value}` for `{key}` (expected on or off)"))),
    }
}

/// Everything that determines one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Arch,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub l2_factor: f64,
    pub dropout_emb: f64,
    pub dropout_enc: f64,
    pub dropout_out: f64,
    pub emb_dim: usize,
    pub hidden: usize,
    pub enc_layers: usize,
    pub seed: u64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Early-stopping metric; only `bleu` is supported.
    pub metric: String,
    pub normalize_features: bool,
    /// Expected feature width; `None` accepts whatever the files hold.
    pub feature_width: Option<usize>,
    pub max_len: usize,
    pub bpe_merges: usize,
    pub beam: usize,
    pub length_norm: f64,
    pub decode_max_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: Arch::Baseline,
            lr: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 64,
            clip_norm: 1.0,
            l2_factor: 1e-5,
            dropout_emb: 0.3,
            dropout_enc: 0.3,
            dropout_out: 0.3,
            emb_dim: 32,
            hidden: 64,
            enc_layers: 2,
            seed: 1,
            max_epochs: 40,
            patience: 10,
            metric: "bleu".into(),
            normalize_features: true,
            feature_width: None,
            max_len: crate::data::MAX_LEN,
            bpe_merges: 10_000,
            beam: 6,
            length_norm: 0.6,
            decode_max_len: 50,
        }
    }
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "arch",
        "lr",
        "beta1",
        "beta2",
        "adam_eps",
        "batch_size",
        "clip_norm",
        "l2_factor",
        "dropout",
        "dropout_emb",
        "dropout_enc",
        "dropout_out",
        "emb_dim",
        "hidden",
        "enc_layers",
        "seed",
        "max_epochs",
        "patience",
        "metric",
        "normalize_features",
        "feature_width",
        "max_len",
        "bpe_merges",
        "beam",
        "length_norm",
        "decode_max_len",
    ];

    /// Set one key. Unknown keys are configuration errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "arch" => self.arch = value.parse()?,
            "lr" => self.lr = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "l2_factor" => self.l2_factor = parse(key, value)?,
            "dropout" => {
                let p = parse(key, value)?;
                self.dropout_emb = p;
                self.dropout_enc = p;
                self.dropout_out = p;
            }
            "dropout_emb" => self.dropout_emb = parse(key, value)?,
            "dropout_enc" => self.dropout_enc = parse(key, value)?,
            "dropout_out" => self.dropout_out = parse(key, value)?,
            "emb_dim" => self.emb_dim = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "enc_layers" => self.enc_layers = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "metric" => self.metric = value.to_string(),
            "normalize_features" => self.normalize_features = parse_flag(key, value)?,
            "feature_width" => self.feature_width = Some(parse(key, value)?),
            "max_len" => self.max_len = parse(key, value)?,
            "bpe_merges" => self.bpe_merges = parse(key, value)?,
            "beam" => self.beam = parse(key, value)?,
            "length_norm" => self.length_norm = parse(key, value)?,
            "decode_max_len" => self.decode_max_len = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    pub fn from_settings(settings: &[Setting]) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for s in settings {
            cfg.set(&s.key, &s.value)
                .map_err(|e| at_line(e, s.line))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("clip_norm", self.clip_norm),
            ("adam_eps", self.adam_eps),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("`{k}` must be positive")));
            }
        }
        for (k, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("`{k}` must be in [0, 1)")));
            }
        }
        if !(self.l2_factor >= 0.0 && self.l2_factor.is_finite()) {
            return Err(Error::Config("`l2_factor` must be non-negative".into()));
        }
        for (k, v) in [
            ("batch_size", self.batch_size),
            ("emb_dim", self.emb_dim),
            ("hidden", self.hidden),
            ("enc_layers", self.enc_layers),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("max_len", self.max_len),
            ("bpe_merges", self.bpe_merges),
            ("beam", self.beam),
            ("decode_max_len", self.decode_max_len),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("`{k}` must be positive")));
            }
        }
        for (k, p) in [
            ("dropout_emb", self.dropout_emb),
            ("dropout_enc", self.dropout_enc),
            ("dropout_out", self.dropout_out),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("`{k}` = {p} outside [0, 1)")));
            }
        }
        if self.feature_width == Some(0) {
            return Err(Error::Config("`feature_width` must be positive".into()));
        }
        if self.metric != "bleu" {
            return Err(Error::Config(format!("unsupported metric `{}` (only bleu)", self.metric)));
        }
        if !(self.length_norm >= 0.0 && self.length_norm.is_finite()) {
            return Err(Error::Config("`length_norm` must be non-negative".into()));
        }
        Ok(())
    }
}

impl SynthSpec {
    pub const KEYS: &'static [&'static str] = &[
        "width",
        "channels",
        "colors",
        "nouns",
        "distractors",
        "min_distractors",
        "noise",
        "feature_scale",
        "train_size",
        "dev_size",
        "test_size",
        "seed",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "width" => self.width = parse(key, value)?,
            "channels" => self.channels = parse(key, value)?,
            "colors" => self.colors = parse(key, value)?,
            "nouns" => self.nouns = parse(key, value)?,
            "distractors" => self.distractors = parse(key, value)?,
            "min_distractors" => self.min_distractors = parse(key, value)?,
            "noise" => self.noise = parse(key, value)?,
            "feature_scale" => self.feature_scale = parse(key, value)?,
            "train_size" => self.train_size = parse(key, value)?,
            "dev_size" => self.dev_size = parse(key, value)?,
            "test_size" => self.test_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown synthetic key `{key}`"))),
        }
        Ok(())
    }

    pub fn from_settings(settings: &[Setting]) -> Result<Self> {
        let mut spec = SynthSpec::default();
        for s in settings {
            spec.set(&s.key, &s.value)
                .map_err(|e| at_line(e, s.line))?;
        }
        spec.validate()?;
        Ok(spec)
    }
}
