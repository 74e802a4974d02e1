//! Synthetic grounded translation task.
//!
//! Each source sentence names an object and a grid cell
//! (`the ball at row two column three`). The target repeats it in the
//! other language and adds the object's color
//! (`le ballon rouge à rangée deux colonne trois`). The color is drawn
//! uniformly and appears only in the feature map, so text alone cannot
//! predict it.
//!
//! Feature channels of every cell, before noise and scaling:
//!
//! * `[0, w)`: one-hot row of the cell,
//! * `[w, 2w)`: one-hot column,
//! * `[2w, 2w + K)`: one-hot color, set only on the named cell and on the
//!   distractor cells (which always carry a different color),
//! * the remaining channels carry noise only.
//!
//! The number of distractors varies per example between `min_distractors`
//! and `distractors`. With a fixed count of `K - 1` the color channels of
//! the whole map are balanced on average, and attention that does not yet
//! locate the named cell gets no gradient towards it; examples with less
//! clutter break that tie.
//!
//! Gaussian noise is added to every channel, negatives are clipped to zero
//! and the map is multiplied by `feature_scale`.

use serde::{Deserialize, Serialize};

use super::corpus::ParallelCorpus;
use super::features::FeatureStore;
use crate::error::{Error, Result};
use crate::tensor::Rng;

const NOUNS: [(&str, &str); 10] = [
    ("ball", "ballon"),
    ("hat", "chapeau"),
    ("book", "livre"),
    ("bike", "vélo"),
    ("dog", "chien"),
    ("cat", "chat"),
    ("truck", "camion"),
    ("bag", "sac"),
    ("car", "taxi"),
    ("boat", "bateau"),
];

const COLORS: [&str; 10] = ["rouge", "bleu", "vert", "jaune", "noir", "blanc", "gris", "violet", "brun", "rose"];

const NUMBERS: [(&str, &str); 14] = [
    ("one", "un"),
    ("two", "deux"),
    ("three", "trois"),
    ("four", "quatre"),
    ("five", "cinq"),
    ("six", "six"),
    ("seven", "sept"),
    ("eight", "huit"),
    ("nine", "neuf"),
    ("ten", "dix"),
    ("eleven", "onze"),
    ("twelve", "douze"),
    ("thirteen", "treize"),
    ("fourteen", "quatorze"),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Grid width `w`; maps have `w²` positions.
    pub width: usize,
    /// Channels `C`, at least `2w + colors`.
    pub channels: usize,
    /// Number of color words `K`.
    pub colors: usize,
    /// Number of distinct referent nouns.
    pub nouns: usize,
    /// Most cells other than the named one that carry a color.
    pub distractors: usize,
    /// Fewest such cells; each example draws its count uniformly in between.
    pub min_distractors: usize,
    /// Standard deviation of the additive noise.
    pub noise: f64,
    /// Multiplier applied after noise.
    pub feature_scale: f64,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            width: 4,
            channels: 16,
            colors: 5,
            nouns: 6,
            distractors: 4,
            min_distractors: 0,
            noise: 0.1,
            feature_scale: 1.0,
            train_size: 3000,
            dev_size: 200,
            test_size: 200,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.width == 0 || self.width > NUMBERS.len() {
            return err(format!("synthetic width must be in 1..={}", NUMBERS.len()));
        }
        if self.colors < 2 || self.colors > COLORS.len() {
            return err(format!("synthetic colors must be in 2..={}", COLORS.len()));
        }
        if self.nouns == 0 || self.nouns > NOUNS.len() {
            return err(format!("synthetic nouns must be in 1..={}", NOUNS.len()));
        }
        if self.channels < 2 * self.width + self.colors {
            return err(format!(
                "synthetic channels {} below 2·width + colors = {}",
                self.channels,
                2 * self.width + self.colors
            ));
        }
        if self.distractors >= self.width * self.width {
            return err(format!("{} distractors do not fit a {}×{} grid", self.distractors, self.width, self.width));
        }
        if self.min_distractors > self.distractors {
            return err(format!(
                "min_distractors {} exceeds distractors {}",
                self.min_distractors, self.distractors
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) || !(self.feature_scale > 0.0 && self.feature_scale.is_finite()) {
            return err("synthetic noise must be ≥ 0 and feature_scale > 0".into());
        }
        if self.train_size == 0 || self.dev_size == 0 || self.test_size == 0 {
            return err("synthetic split sizes must be positive".into());
        }
        Ok(())
    }

    pub fn color_words(&self) -> &'static [&'static str] {
        &COLORS[..self.colors]
    }
}

/// One generated split.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSplit {
    pub name: &'static str,
    pub corpus: ParallelCorpus,
    pub features: FeatureStore,
    /// Color word of each target sentence.
    pub answers: Vec<String>,
    /// Named cell of each example, `row · w + col`.
    pub cells: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub spec: SynthSpec,
    pub train: SynthSplit,
    pub dev: SynthSplit,
    pub test: SynthSplit,
}

fn generate_split(spec: &SynthSpec, name: &'static str, n: usize, rng: &mut Rng) -> SynthSplit {
    let (w, c, k) = (spec.width, spec.channels, spec.colors);
    let p = w * w;
    let mut src = Vec::with_capacity(n);
    let mut tgt = Vec::with_capacity(n);
    let mut answers = Vec::with_capacity(n);
    let mut cells = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * c * p);
    for _ in 0..n {
        let noun = rng.below(spec.nouns);
        let row = rng.below(w);
        let col = rng.below(w);
        let color = rng.below(k);
        let cell = row * w + col;

        let mut others: Vec<usize> = (0..p).filter(|&q| q != cell).collect();
        let count = spec.min_distractors + rng.below(spec.distractors - spec.min_distractors + 1);
        for i in 0..count {
            let j = i + rng.below(others.len() - i);
            others.swap(i, j);
        }
        let mut cell_color = vec![None; p];
        cell_color[cell] = Some(color);
        for &q in &others[..count] {
            let shift = 1 + rng.below(k - 1);
            cell_color[q] = Some((color + shift) % k);
        }

        let mut map = vec![0.0f32; c * p];
        for q in 0..p {
            map[(q / w) * p + q] = 1.0;
            map[(w + q % w) * p + q] = 1.0;
            if let Some(col) = cell_color[q] {
                map[(2 * w + col) * p + q] = 1.0;
            }
        }
        for v in &mut map {
            let noisy = *v as f64 + spec.noise * rng.normal();
            *v = (noisy.max(0.0) * spec.feature_scale) as f32;
        }
        data.extend_from_slice(&map);

        let (en, fr) = NOUNS[noun];
        src.push(format!("the {en} at row {} column {}", NUMBERS[row].0, NUMBERS[col].0));
        tgt.push(format!(
            "le {fr} {} à rangée {} colonne {}",
            COLORS[color], NUMBERS[row].1, NUMBERS[col].1
        ));
        answers.push(COLORS[color].to_string());
        cells.push(cell);
    }
    SynthSplit {
        name,
        corpus: ParallelCorpus { src, tgt },
        features: FeatureStore::new(n, c, w, data).expect("generated maps have the declared shape"),
        answers,
        cells,
    }
}

/// Generate all three splits; identical specs give identical data.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let root = Rng::seed_from(spec.seed);
    Ok(SynthData {
        spec: spec.clone(),
        train: generate_split(spec, "train", spec.train_size, &mut root.fork(0)),
        dev: generate_split(spec, "dev", spec.dev_size, &mut root.fork(1)),
        test: generate_split(spec, "test", spec.test_size, &mut root.fork(2)),
    })
}

/// Fraction of hypotheses whose first color word is the expected one.
pub fn ambiguous_accuracy(hypotheses: &[String], answers: &[String], colors: &[&str]) -> f64 {
    if answers.is_empty() {
        return 0.0;
    }
    let hits = hypotheses
        .iter()
        .zip(answers)
        .filter(|(h, a)| h.split_whitespace().find(|t| colors.contains(t)) == Some(a.as_str()))
        .count();
    hits as f64 / answers.len() as f64
}

/// Color read off the named cell's color channels.
pub fn oracle_color(features: &FeatureStore, item: usize, cell: usize, width: usize, colors: usize) -> usize {
    let map = features.positions_major(item);
    let row = &map[cell * features.channels()..(cell + 1) * features.channels()];
    let color = &row[2 * width..2 * width + colors];
    let mut best = 0;
    for (i, &v) in color.iter().enumerate() {
        if v > color[best] {
            best = i;
        }
    }
    best
}
