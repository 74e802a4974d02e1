//! File-level pipelines: data layout, training runs, translation and the
//! multi-seed experiment matrix.

mod layout;
mod matrix;
mod run;
mod translate;

pub use layout::{split_paths, write_synth, SplitPaths, SPLITS, SYNTH_SPEC_FILE};
pub use matrix::{matrix_threads, run_matrix, MatrixConfig, MatrixReport, RunResult, RESULT_FILE};
pub use run::{
    dev_bleu, load_features, load_split, prepare, train_run, Prepared, RunSummary, BPE_FILE, SRC_VOCAB_FILE, TGT_VOCAB_FILE,
};
pub use translate::{decode_corpus, translate, DecodeOptions, Translator};
