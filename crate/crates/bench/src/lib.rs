//! Fixtures shared by the benchmarks.

use mmt_core::data::{generate, SynthSpec};
use mmt_core::experiment::{prepare, write_synth, Prepared};
use mmt_core::model::Arch;
use mmt_core::train::{TrainConfig, Trainer};
use mmt_core::{Rng, Tensor};

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = Rng::seed_from(seed);
    Tensor::new(&[rows, cols], (0..rows * cols).map(|_| rng.normal() as f32).collect()).unwrap()
}

/// A prepared default synthetic corpus, held in memory; the files are removed
/// on return.
pub fn synth_fixture(arch: Arch, train_size: usize) -> (TrainConfig, Prepared) {
    let spec = SynthSpec {
        train_size,
        ..SynthSpec::default()
    };
    let dir = tempfile::tempdir().unwrap();
    write_synth(&generate(&spec).unwrap(), dir.path()).unwrap();
    let cfg = TrainConfig {
        arch,
        ..TrainConfig::default()
    };
    let prep = prepare(&cfg, dir.path()).unwrap();
    (cfg, prep)
}

pub fn trainer(cfg: &TrainConfig, prep: &Prepared) -> Trainer {
    let mc = cfg.model_config(prep.src_vocab.len(), prep.tgt_vocab.len(), prep.feat_channels());
    Trainer::new(cfg.clone(), mc).unwrap()
}
