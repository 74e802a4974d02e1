//! Text preprocessing, joint BPE, vocabularies, batching, feature files and
//! the synthetic grounded task.

pub mod bpe;
pub mod corpus;
pub mod features;
pub mod synth;
pub mod text;
pub mod vocab;

pub use bpe::{remove_bpe, BpeModel};
pub use corpus::{batch_order, IndexedCorpus, ParallelCorpus, MAX_LEN};
pub use features::FeatureStore;
pub use synth::{ambiguous_accuracy, generate, SynthData, SynthSpec, SynthSplit};
pub use text::preprocess;
pub use vocab::{Vocabulary, BOS, EOS, PAD, UNK};
