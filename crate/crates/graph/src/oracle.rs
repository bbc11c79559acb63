//! Breadth-first linearization of gold graphs into expansion steps.
//!
//! Step `i` inserts node `i`. Its sources are every neighbor that is already
//! inserted; an edge pointing from the new node back to an earlier one is
//! recorded with the inverse (`-of`) label so that each step only describes
//! edges seen from already-built nodes.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{invert_label, is_inverse_label, AmrGraph, GraphBuilder, GraphError, Node};

/// Sentinel concept that ends a parse.
pub const EOG: &str = "<eog>";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("graph is disconnected: only {reached} of {total} nodes reachable from the root")]
    Disconnected { reached: usize, total: usize },
    #[error("malformed relation frequency table at line {line}: {msg}")]
    Table { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleStep {
    pub index: usize,
    pub concept: String,
    pub is_attribute: bool,
    /// `(earlier node index, label seen from that node)`
    pub sources: Vec<(usize, String)>,
}

impl OracleStep {
    pub fn is_eog(&self) -> bool {
        self.concept == EOG
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiblingOrder {
    Random(u64),
    FrequencySorted,
}

/// Relation label counts over a training corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelationFrequency {
    counts: BTreeMap<String, u64>,
}

impl RelationFrequency {
    pub fn from_graphs<'a>(graphs: impl IntoIterator<Item = &'a AmrGraph>) -> Self {
        let mut counts = BTreeMap::new();
        for g in graphs {
            for e in g.edges() {
                *counts.entry(e.label.clone()).or_insert(0) += 1;
            }
        }
        RelationFrequency { counts }
    }

    /// Count of a label; inverse labels share the count of their forward form.
    pub fn count(&self, label: &str) -> u64 {
        let base = if is_inverse_label(label) {
            invert_label(label)
        } else {
            label.to_string()
        };
        self.counts.get(&base).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// `label<TAB>count` lines, sorted by label.
    pub fn to_tsv(&self) -> String {
        self.counts
            .iter()
            .map(|(k, v)| format!("{k}\t{v}\n"))
            .collect()
    }

    pub fn from_tsv(text: &str) -> Result<Self, OracleError> {
        let mut counts = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: &str| OracleError::Table {
                line: i + 1,
                msg: msg.to_string(),
            };
            let (label, count) = line.split_once('\t').ok_or_else(|| err("expected two columns"))?;
            let count = count.trim().parse().map_err(|_| err("count is not an integer"))?;
            counts.insert(label.to_string(), count);
        }
        Ok(RelationFrequency { counts })
    }
}

/// Linearizes `graph` breadth-first from its root and appends the EOG step.
pub fn bfs_order(
    graph: &AmrGraph,
    order: SiblingOrder,
    freq: &RelationFrequency,
) -> Result<Vec<OracleStep>, OracleError> {
    let adjacency = graph.adjacency();
    let mut rng = match order {
        SiblingOrder::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        SiblingOrder::FrequencySorted => None,
    };
    let mut position = vec![usize::MAX; graph.len()];
    let mut sequence = Vec::with_capacity(graph.len());
    let mut queue = VecDeque::from([graph.root()]);
    position[graph.root()] = 0;
    sequence.push(graph.root());
    while let Some(u) = queue.pop_front() {
        // (neighbor, label seen from u, outgoing)
        let mut children: Vec<(usize, String, bool)> = adjacency[u]
            .iter()
            .filter(|(v, _, _)| position[*v] == usize::MAX)
            .map(|&(v, e, outgoing)| {
                let label = &graph.edges()[e].label;
                let seen = if outgoing {
                    label.clone()
                } else {
                    invert_label(label)
                };
                (v, seen, outgoing)
            })
            .collect();
        match rng.as_mut() {
            Some(rng) => children.shuffle(rng),
            None => children.sort_by(|a, b| {
                freq.count(&b.1)
                    .cmp(&freq.count(&a.1))
                    .then_with(|| b.2.cmp(&a.2))
                    .then_with(|| a.1.cmp(&b.1))
                    .then_with(|| a.0.cmp(&b.0))
            }),
        }
        for (v, _, _) in children {
            // a node reachable through two edges of u appears twice
            if position[v] == usize::MAX {
                position[v] = sequence.len();
                sequence.push(v);
                queue.push_back(v);
            }
        }
    }
    if sequence.len() != graph.len() {
        return Err(OracleError::Disconnected {
            reached: sequence.len(),
            total: graph.len(),
        });
    }

    let mut steps: Vec<OracleStep> = sequence
        .iter()
        .enumerate()
        .map(|(i, &node)| OracleStep {
            index: i,
            concept: graph.node(node).label.clone(),
            is_attribute: graph.node(node).is_attribute,
            sources: Vec::new(),
        })
        .collect();
    for e in graph.edges() {
        let (ps, pt) = (position[e.source], position[e.target]);
        if ps < pt {
            steps[pt].sources.push((ps, e.label.clone()));
        } else {
            steps[ps].sources.push((pt, invert_label(&e.label)));
        }
    }
    for step in &mut steps {
        step.sources.sort();
    }
    steps.push(OracleStep {
        index: sequence.len(),
        concept: EOG.to_string(),
        is_attribute: false,
        sources: Vec::new(),
    });
    Ok(steps)
}

/// Replays expansion steps into a graph. A trailing EOG step is ignored.
pub fn steps_to_graph(steps: &[OracleStep]) -> Result<AmrGraph, GraphError> {
    let mut builder = GraphBuilder::new();
    for step in steps.iter().take_while(|s| !s.is_eog()) {
        let id = builder.add_node(Node {
            label: step.concept.clone(),
            is_attribute: step.is_attribute,
        });
        for (source, label) in &step.sources {
            if is_inverse_label(label) {
                builder.add_edge(id, *source, invert_label(label));
            } else {
                builder.add_edge(*source, id, label.clone());
            }
        }
    }
    builder.finish(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penman::parse_penman;
    use crate::random::{random_graph, RandomGraphConfig};
    use crate::smatch::smatch_exact;
    use proptest::prelude::*;

    fn figure_graph() -> AmrGraph {
        parse_penman("(g / go-02 :ARG0 (b / boy) :polarity - :mod (m / must))").unwrap()
    }

    #[test]
    fn frequency_sorted_children() {
        let g = figure_graph();
        let mut freq = RelationFrequency::default();
        freq.counts.insert("ARG0".into(), 10);
        freq.counts.insert("polarity".into(), 3);
        freq.counts.insert("mod".into(), 7);
        let steps = bfs_order(&g, SiblingOrder::FrequencySorted, &freq).unwrap();
        let concepts: Vec<_> = steps.iter().map(|s| s.concept.as_str()).collect();
        assert_eq!(concepts, ["go-02", "boy", "must", "-", EOG]);
        assert!(steps[0].sources.is_empty());
        assert_eq!(steps[1].sources, vec![(0, "ARG0".to_string())]);
        assert_eq!(steps[3].sources, vec![(0, "polarity".to_string())]);
        assert!(steps[3].is_attribute);
        assert!(steps[4].is_eog() && steps[4].sources.is_empty());
    }

    #[test]
    fn single_node_graph() {
        let steps = bfs_order(
            &AmrGraph::single("alpha"),
            SiblingOrder::FrequencySorted,
            &RelationFrequency::default(),
        )
        .unwrap();
        assert_eq!(steps.len(), 2);
        assert_eq!(steps[0].concept, "alpha");
        assert!(steps[1].is_eog());
    }

    #[test]
    fn back_edges_use_inverse_labels() {
        // boy is the root; go-02 points back at it
        let g = parse_penman("(b / boy :ARG0-of (g / go-02))").unwrap();
        let steps = bfs_order(&g, SiblingOrder::FrequencySorted, &RelationFrequency::default())
            .unwrap();
        assert_eq!(steps[1].concept, "go-02");
        assert_eq!(steps[1].sources, vec![(0, "ARG0-of".to_string())]);
        assert_eq!(steps_to_graph(&steps).unwrap(), g);
    }

    #[test]
    fn reentrant_node_has_two_sources() {
        let g = parse_penman("(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-02 :ARG0 b))").unwrap();
        let freq = RelationFrequency::from_graphs([&g]);
        let steps = bfs_order(&g, SiblingOrder::FrequencySorted, &freq).unwrap();
        // ARG0 occurs twice so boy comes first; go-02 then sees want-01 and boy
        let concepts: Vec<_> = steps.iter().map(|s| s.concept.as_str()).collect();
        assert_eq!(concepts, ["want-01", "boy", "go-02", EOG]);
        assert_eq!(
            steps[2].sources,
            vec![(0, "ARG1".to_string()), (1, "ARG0-of".to_string())]
        );
    }

    #[test]
    fn relation_table_roundtrip() {
        let g = figure_graph();
        let freq = RelationFrequency::from_graphs([&g, &g]);
        assert_eq!(freq.count("ARG0"), 2);
        assert_eq!(freq.count("ARG0-of"), 2);
        let back = RelationFrequency::from_tsv(&freq.to_tsv()).unwrap();
        assert_eq!(back, freq);
        assert!(RelationFrequency::from_tsv("ARG0 3\n").is_err());
        assert!(RelationFrequency::from_tsv("ARG0\tx\n").is_err());
    }

    proptest! {
        #[test]
        fn steps_are_valid_and_reconstruct(seed in any::<u64>(), order_seed in any::<u64>(), random in any::<bool>()) {
            let g = random_graph(seed, &RandomGraphConfig::default());
            let freq = RelationFrequency::from_graphs([&g]);
            let order = if random { SiblingOrder::Random(order_seed) } else { SiblingOrder::FrequencySorted };
            let steps = bfs_order(&g, order, &freq).unwrap();
            prop_assert_eq!(steps.len(), g.len() + 1);
            for (i, step) in steps.iter().enumerate() {
                prop_assert_eq!(step.index, i);
                if i > 0 && !step.is_eog() {
                    prop_assert!(!step.sources.is_empty());
                }
                for (src, _) in &step.sources {
                    prop_assert!(*src < i);
                }
            }
            prop_assert!(steps.last().unwrap().is_eog());
            let rebuilt = steps_to_graph(&steps).unwrap();
            let m = smatch_exact(&rebuilt, &g).unwrap();
            prop_assert_eq!(m.f1(), 1.0);
            prop_assert_eq!(rebuilt.edges().len(), g.edges().len());
        }

        #[test]
        fn frequency_order_is_deterministic(seed in any::<u64>()) {
            let g = random_graph(seed, &RandomGraphConfig::default());
            let freq = RelationFrequency::from_graphs([&g]);
            prop_assert_eq!(
                bfs_order(&g, SiblingOrder::FrequencySorted, &freq).unwrap(),
                bfs_order(&g, SiblingOrder::FrequencySorted, &freq).unwrap()
            );
        }
    }
}
