//! Shell noun detection toolkit.
//!
//! Shell nouns are abstract nouns ("fact", "issue", "idea") that convey or
//! refer to complex content in context; whether a given occurrence is a shell
//! noun depends on its behavior in the sentence, not on the word alone. This
//! crate treats detection as binary token classification (`O` vs `SHELL`) and
//! provides:
//!
//! - [`corpus`]: annotated/raw corpus readers and writers, label scheme,
//!   corpus statistics.
//! - [`nn`]: dense matrices, a small reverse-mode differentiation graph,
//!   optimizers, and finite-difference gradient checking.
//! - [`embeddings`]: static word-vector tables, trainable embeddings, and the
//!   optional POS one-hot feature.
//! - [`encoders`]: an LSTM-based encoder and a transformer-based encoder, both
//!   mapping a sentence to per-token emission scores.
//! - [`crf`]: linear-chain CRF scoring, log-partition, negative log-likelihood,
//!   Viterbi decoding, and the per-token cross-entropy alternative.
//! - [`patterns`]: the traditional lexico-grammatical pattern baseline.
//! - [`metrics`]: token-level precision/recall/F1 for the SHELL class.
//! - [`model`] / [`trainer`]: model assembly, serialization, the training
//!   loop, evaluation, and shell-noun-type discovery.
//! - [`synth`]: a seeded synthetic corpus generator used by tests and benches.

pub mod corpus;
pub mod crf;
pub mod embeddings;
pub mod encoders;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod patterns;
pub mod synth;
pub mod trainer;

pub use corpus::{Corpus, CorpusStats, Label, Sentence, Token};
pub use crf::{EmissionMatrix, TransitionMatrix};
pub use metrics::{ConfusionCounts, Metrics};
pub use model::{Arch, LossKind, Model};
pub use trainer::{DiscoveryReport, TrainConfig};
pub use nn::{Matrix, ParamSet};

