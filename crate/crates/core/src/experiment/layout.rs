use std::path::{Path, PathBuf};

use crate::data::corpus::write_lines;
use crate::data::SynthData;
use crate::error::{Error, Result};

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];
pub const SYNTH_SPEC_FILE: &str = "synth.json";

/// Files of one split inside a data directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitPaths {
    pub src: PathBuf,
    pub tgt: PathBuf,
    pub features: PathBuf,
    /// Expected color word per sentence (synthetic data only).
    pub answers: PathBuf,
}

pub fn split_paths(dir: &Path, split: &str) -> SplitPaths {
    SplitPaths {
        src: dir.join(format!("{split}.en")),
        tgt: dir.join(format!("{split}.fr")),
        features: dir.join(format!("{split}.feat")),
        answers: dir.join(format!("{split}.answers")),
    }
}

/// Write every split of a synthetic dataset plus a snapshot of its spec.
pub fn write_synth(data: &SynthData, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for split in [&data.train, &data.dev, &data.test] {
        let p = split_paths(dir, split.name);
        split.corpus.save(&p.src, &p.tgt)?;
        split.features.save(&p.features)?;
        write_lines(&p.answers, &split.answers)?;
    }
    let spec = serde_json::to_string_pretty(&data.spec).map_err(|e| Error::Contract(e.to_string()))?;
    std::fs::write(dir.join(SYNTH_SPEC_FILE), spec + "\n")?;
    Ok(())
}
