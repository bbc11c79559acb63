//! Incremental AMR parsing with dual graph-sequence iterative inference.
//!
//! A sentence is encoded once; the graph then grows one node per
//! expansion. Each expansion alternates `N` times between a relation
//! solver that points into the partial graph and a concept solver that
//! attends over the sentence, then commits a concept, its source nodes and
//! their edge labels.

pub mod config;
pub mod corpus;
pub mod encoders;
pub mod experiments;
pub mod inference;
pub mod model;
pub mod preprocess;
pub mod solvers;
pub mod toy;
pub mod training;
pub mod vocab;

pub use config::{ConfigError, DecodeConfig, ModelConfig, Profile, RunConfig, TrainConfig};
pub use corpus::{parse_corpus, read_sidecar, write_corpus, write_sidecar, CorpusError, CorpusRecord, Sidecar};
pub use encoders::{GraphMemory, SentenceInput, TextMemory};
pub use inference::{parse, parse_beam, parse_greedy, DecodeOptions, Decoded, Expansion, Session, StepRecord};
pub use model::{Metadata, Model, ModelError};
pub use solvers::{extract_edges, Calls};
pub use training::{
    lr_schedule, make_oracle, mask_features, step_loss, train, train_step, Example, LogRecord, Phase, TrainError,
    TrainOutcome, TrainState,
};
pub use vocab::{Vocab, Vocabularies};
