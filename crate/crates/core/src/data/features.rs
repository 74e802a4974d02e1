//! Binary store of per-sentence feature maps.
//!
//! File layout, all integers little-endian:
//!
//! ```text
//! "MMFV1\0" | u32 count | u32 C | u32 w | count·C·w·w f32 | u32 CRC32
//! ```
//!
//! Maps are channel-major (`item, channel, row, col`). The checksum covers
//! the float payload.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FEATURE_MAGIC: &[u8; 6] = b"MMFV1\0";

/// Guard in `x / max(‖x‖, eps)`.
pub const NORM_EPS: f32 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStore {
    count: usize,
    channels: usize,
    width: usize,
    data: Vec<f32>,
    normalized: bool,
}

impl FeatureStore {
    /// `data` in channel-major order, `count · channels · width²` values.
    pub fn new(count: usize, channels: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || width == 0 {
            return Err(Error::Config("feature maps need at least one channel and width 1".into()));
        }
        if data.len() != count * channels * width * width {
            return Err(Error::dim("feature store", &[count, channels, width, width], &[data.len()]));
        }
        Ok(FeatureStore {
            count,
            channels,
            width,
            data,
            normalized: false,
        })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn positions(&self) -> usize {
        self.width * self.width
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    fn item_len(&self) -> usize {
        self.channels * self.positions()
    }

    /// Map `i` as stored, `[C, w, w]`.
    pub fn map(&self, i: usize) -> Tensor<f32> {
        let n = self.item_len();
        Tensor::new(&[self.channels, self.width, self.width], self.data[i * n..(i + 1) * n].to_vec())
            .expect("stored map has its declared shape")
    }

    /// Map `i` as `P` rows of `C` channels.
    pub fn positions_major(&self, i: usize) -> Vec<f32> {
        let (c, p) = (self.channels, self.positions());
        let item = &self.data[i * c * p..(i + 1) * c * p];
        let mut out = vec![0.0; c * p];
        for ch in 0..c {
            for pos in 0..p {
                out[pos * c + ch] = item[ch * p + pos];
            }
        }
        out
    }

    /// `[B, P, C]` for the given item indices.
    pub fn batch(&self, items: &[usize]) -> Tensor<f32> {
        let mut data = Vec::with_capacity(items.len() * self.item_len());
        for &i in items {
            data.extend(self.positions_major(i));
        }
        Tensor::new(&[items.len(), self.positions(), self.channels], data).expect("batch shape matches")
    }

    /// Scale every position's channel vector to unit L2 norm.
    pub fn normalize(&mut self) {
        let (c, p) = (self.channels, self.positions());
        for item in self.data.chunks_mut(c * p) {
            for pos in 0..p {
                let norm = (0..c).map(|ch| item[ch * p + pos] as f64).map(|v| v * v).sum::<f64>().sqrt() as f32;
                let d = norm.max(NORM_EPS);
                for ch in 0..c {
                    item[ch * p + pos] /= d;
                }
            }
        }
        self.normalized = true;
    }

    /// Multiply every value by `factor`.
    pub fn scale(&mut self, factor: f32) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    /// Fail unless there is exactly one map per sentence.
    pub fn check_aligned(&self, sentences: usize) -> Result<()> {
        if self.count != sentences {
            return Err(Error::Alignment(format!(
                "{} feature maps for {sentences} sentences",
                self.count
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FEATURE_MAGIC.len() + 16 + self.data.len() * 4);
        out.extend_from_slice(FEATURE_MAGIC);
        for v in [self.count, self.channels, self.width] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        let start = out.len();
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |detail: String| Error::format("feature file", detail);
        let header = FEATURE_MAGIC.len() + 12;
        if bytes.len() < header + 4 {
            return Err(bad(format!("{} bytes is too short", bytes.len())));
        }
        if &bytes[..FEATURE_MAGIC.len()] != FEATURE_MAGIC {
            return Err(bad("wrong magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let m = FEATURE_MAGIC.len();
        let (count, channels, width) = (u32_at(m), u32_at(m + 4), u32_at(m + 8));
        let floats = count
            .checked_mul(channels)
            .and_then(|v| v.checked_mul(width))
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| bad("shape overflows".into()))?;
        let expected = floats.checked_mul(4).and_then(|v| v.checked_add(header + 4));
        if expected != Some(bytes.len()) {
            return Err(bad(format!(
                "header declares {count}×{channels}×{width}×{width} floats but file has {} bytes",
                bytes.len()
            )));
        }
        let payload = &bytes[header..bytes.len() - 4];
        let stored = u32_at(bytes.len() - 4) as u32;
        let actual = crc32fast::hash(payload);
        if stored != actual {
            return Err(bad(format!("checksum mismatch: stored {stored:08x}, computed {actual:08x}")));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(count, channels, width, data).map_err(|e| bad(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Read a store, optionally normalizing every position.
    pub fn load(path: &Path, normalize: bool) -> Result<Self> {
        let mut store = Self::from_bytes(&std::fs::read(path)?)?;
        if normalize {
            store.normalize();
        }
        Ok(store)
    }
}
