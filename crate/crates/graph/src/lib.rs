//! AMR graphs and everything that operates on them without a model:
//! Penman reading and writing, breadth-first oracle linearization,
//! sense and wiki preprocessing, and Smatch scoring.

pub mod graph;
pub mod metrics;
pub mod oracle;
pub mod penman;
pub mod random;
pub mod senses;
pub mod smatch;

pub use graph::{invert_label, is_inverse_label, AmrGraph, Edge, GraphBuilder, GraphError, Node};
pub use metrics::{corpus_smatch, fine_grained, FineGrained, MetricsError, Prf};
pub use oracle::{bfs_order, steps_to_graph, OracleError, OracleStep, RelationFrequency, SiblingOrder, EOG};
pub use penman::{parse_penman, read_penman_blocks, serialize_penman, PenmanError};
pub use senses::{remove_senses, restore_senses, strip_sense, strip_wiki, SenseTable};
pub use smatch::{smatch, smatch_exact, MatchResult, SmatchConfig, SmatchError, TripleSet};
