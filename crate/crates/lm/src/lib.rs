//! Toy word-level LSTM language model whose gate matrices are doped
//! structured weights, trained with truncated BPTT, annealed magnitude
//! pruning of the doping term and co-matrix dropout.

pub mod checkpoint;
pub mod config;
pub mod corpus;
mod error;
pub mod model;
pub mod train;
pub mod vocab;

pub use config::{LayerConfig, PruningConfig, TrainConfig};
pub use corpus::{synthetic_corpus, toy_corpus, Batches, Corpus, TOY_CHARS, TOY_SEED};
pub use error::{LmError, Result};
pub use model::{LanguageModel, LstmLayer, ModelGrads, State, WindowMode};
pub use train::{clip_global_norm, evaluate_perplexity, train, EpochRecord, PruneEvent, PruneProbe, TrainState, Trainer};
pub use vocab::{build_vocab, Vocab};
