//! Aspect term extraction for review sentences.
//!
//! The pipeline turns SemEval-style review XML plus externally produced
//! CoNLL-U dependency parses into token sequences, encodes every token as
//! a word embedding, a UPOS embedding and an optional sinusoidal positional
//! encoding (sequence position or dependency-tree level index), and labels
//! the tokens with a BiLSTM feature extractor feeding a linear-chain CRF
//! over the B/I/O scheme.
//!
//! All training math is done in `f64` with hand-written backward passes,
//! which lets the gradient checker compare every trainable tensor against
//! central finite differences.

pub mod bilstm;
pub mod corpus;
pub mod crf;
pub mod dataset;
pub mod deptree;
pub mod encoding;
pub mod error;
pub mod metrics;
pub mod parallel;
pub mod synthetic;
pub mod trainer;

pub use corpus::{Corpus, Label, LabeledSequence, Opinion, Review, Sentence, SplitTag};
pub use crf::CrfParams;
pub use deptree::{DepToken, DepTree, LevelIndexVector};
pub use encoding::{EmbeddingTable, EncodedSentence, PositionMode, PositionalConfig};
pub use error::{Error, Result};
pub use metrics::{LabelReport, SpanReport};
pub use parallel::Execution;
pub use trainer::{ModelConfig, TaggerModel, TrainConfig};
