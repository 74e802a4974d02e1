//! Miniature multimodal neural machine translation.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: dense tensors, the reverse-mode tape and the seeded generator.
//! * [`model`]: the CGRU encoder-decoder with optional multimodal (MA) and
//!   filtered (FA) visual attention.
//! * [`data`]: text normalization, joint BPE, vocabularies, batching,
//!   feature files and the synthetic grounded-translation task.
//! * [`train`]: initialization, Adam, regularization, early stopping and
//!   checkpoints.
//! * [`decode`] and [`eval`]: greedy, beam and ensemble decoding; BLEU,
//!   approximate randomization and multi-seed reports.
//! * [`experiment`]: end-to-end pipelines used by the command-line tool.

pub mod data;
pub mod decode;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Rng, Tape, Tensor, Var};
