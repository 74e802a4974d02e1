//! Binary training snapshots.
//!
//! Layout: `MMCK1\0`, a little-endian `u32` manifest length, the JSON
//! manifest, the raw `f32` payloads (`param/`, `adam_m/`, `adam_v/` per
//! parameter, in manifest order) and a CRC32 of every preceding byte.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Param, ParamSet};
use crate::tensor::{RngState, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"MMCK1\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    is_bias: bool,
    /// Element offset into the payload.
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    train: TrainConfig,
    model: ModelConfig,
    progress: Progress,
    tensors: Vec<TensorEntry>,
}

/// Loop counters saved alongside the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    /// Completed epochs.
    pub epoch: usize,
    pub rng: RngState,
    /// Best dev metric so far, stored as raw bits so it round-trips exactly.
    pub best_metric_bits: Option<u64>,
    pub best_epoch: Option<usize>,
    pub epochs_since_best: usize,
    pub adam_step: u64,
}

impl Progress {
    pub fn best_metric(&self) -> Option<f64> {
        self.best_metric_bits.map(f64::from_bits)
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub progress: Progress,
    pub params: ParamSet,
    pub adam: AdamState,
}

fn corrupt(detail: impl Into<String>) -> Error {
    Error::format("checkpoint", detail)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let n = self.params.len();
        if self.adam.m.len() != n || self.adam.v.len() != n {
            return Err(Error::Contract("optimizer state does not match parameters".into()));
        }
        let mut tensors = Vec::with_capacity(3 * n);
        let mut payload: Vec<&Tensor> = Vec::with_capacity(3 * n);
        let mut offset = 0;
        for (prefix, group) in [("param", 0), ("adam_m", 1), ("adam_v", 2)] {
            for (i, p) in self.params.iter().enumerate() {
                let t: &Tensor = match group {
                    0 => &p.value,
                    1 => &self.adam.m[i],
                    _ => &self.adam.v[i],
                };
                if t.shape() != p.value.shape() {
                    return Err(Error::dim("checkpoint", p.value.shape(), t.shape()));
                }
                tensors.push(TensorEntry {
                    name: format!("{prefix}/{}", p.name),
                    shape: t.shape().to_vec(),
                    is_bias: p.is_bias,
                    offset,
                });
                offset += t.numel();
                payload.push(t);
            }
        }
        let mut progress = self.progress.clone();
        progress.adam_step = self.adam.step;
        let manifest = Manifest {
            version: CHECKPOINT_VERSION,
            train: self.train.clone(),
            model: self.model.clone(),
            progress,
            tensors,
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| corrupt(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + 4 * offset);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for t in payload {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let head = CHECKPOINT_MAGIC.len() + 4;
        if bytes.len() < head + 4 || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic or truncated header"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("four bytes"));
        if crc32fast::hash(body) != stored {
            return Err(corrupt("checksum mismatch"));
        }
        let json_len = u32::from_le_bytes(body[6..10].try_into().expect("four bytes")) as usize;
        let json = body
            .get(head..head + json_len)
            .ok_or_else(|| corrupt("manifest runs past the end"))?;
        let manifest: Manifest = serde_json::from_slice(json).map_err(|e| corrupt(e.to_string()))?;
        if manifest.version != CHECKPOINT_VERSION {
            return Err(corrupt(format!("unsupported version {}", manifest.version)));
        }
        let floats = &body[head + json_len..];
        if floats.len() % 4 != 0 {
            return Err(corrupt("payload is not a whole number of floats"));
        }
        let values: Vec<f32> = floats
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect();

        let n = manifest.tensors.len() / 3;
        if manifest.tensors.len() != 3 * n {
            return Err(corrupt("tensor table is not three groups"));
        }
        let mut expected = 0;
        let mut read = |e: &TensorEntry| -> Result<Tensor> {
            let numel: usize = e.shape.iter().product();
            if e.offset != expected || e.offset + numel > values.len() {
                return Err(corrupt(format!("tensor `{}` out of range", e.name)));
            }
            expected += numel;
            Tensor::new(&e.shape, values[e.offset..e.offset + numel].to_vec())
        };
        let mut params = Vec::with_capacity(n);
        for e in &manifest.tensors[..n] {
            let name = e
                .name
                .strip_prefix("param/")
                .ok_or_else(|| corrupt(format!("unexpected tensor `{}`", e.name)))?;
            params.push(Param {
                name: name.to_string(),
                value: Arc::new(read(e)?),
                is_bias: e.is_bias,
            });
        }
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for (group, prefix, out) in [(1, "adam_m/", &mut m), (2, "adam_v/", &mut v)] {
            for (i, e) in manifest.tensors[group * n..(group + 1) * n].iter().enumerate() {
                if e.name.strip_prefix(prefix) != Some(params[i].name.as_str()) || e.shape != params[i].value.shape() {
                    return Err(corrupt(format!("unexpected tensor `{}`", e.name)));
                }
                out.push(read(e)?);
            }
        }
        if expected != values.len() {
            return Err(corrupt("trailing payload"));
        }
        let step = manifest.progress.adam_step;
        Ok(Checkpoint {
            train: manifest.train,
            model: manifest.model,
            progress: manifest.progress,
            params: ParamSet::new(params)?,
            adam: AdamState { m, v, step },
        })
    }

    /// Write atomically through a sibling temporary file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
