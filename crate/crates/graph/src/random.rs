//! Seeded random graphs for property tests and round-trip checks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{AmrGraph, GraphBuilder, Node};

#[derive(Debug, Clone)]
pub struct RandomGraphConfig {
    pub min_vars: usize,
    pub max_vars: usize,
    pub concepts: Vec<String>,
    pub relations: Vec<String>,
    /// chance that a tree edge points from the new node back to its parent
    pub back_edge_prob: f64,
    /// chance of one extra edge to an earlier node
    pub reentrancy_prob: f64,
    pub attribute_prob: f64,
}

impl Default for RandomGraphConfig {
    fn default() -> Self {
        let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect();
        RandomGraphConfig {
            min_vars: 1,
            max_vars: 8,
            concepts: s(&["go-02", "boy", "girl", "want-01", "see-01", "big", "and"]),
            relations: s(&["ARG0", "ARG1", "ARG2", "mod", "op1"]),
            back_edge_prob: 0.2,
            reentrancy_prob: 0.3,
            attribute_prob: 0.3,
        }
    }
}

const ATTRIBUTES: [(&str, &str); 5] = [
    ("polarity", "-"),
    ("quant", "3"),
    ("quant", "12"),
    ("op1", "Obama"),
    ("mode", "imperative"),
];

pub fn random_graph(seed: u64, config: &RandomGraphConfig) -> AmrGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(config.min_vars.max(1)..=config.max_vars.max(config.min_vars).max(1));
    let mut b = GraphBuilder::new();
    for _ in 0..n {
        let c = config.concepts.choose(&mut rng).expect("concept pool");
        b.add_node(Node::concept(c.clone()));
    }
    for i in 1..n {
        let parent = rng.gen_range(0..i);
        let label = config.relations.choose(&mut rng).expect("relation pool").clone();
        if rng.gen_bool(config.back_edge_prob) {
            b.add_edge(i, parent, label);
        } else {
            b.add_edge(parent, i, label);
        }
        if i >= 2 && rng.gen_bool(config.reentrancy_prob) {
            let other = rng.gen_range(0..i);
            let label = config.relations.choose(&mut rng).expect("relation pool").clone();
            b.add_edge(other, i, label);
        }
    }
    for v in 0..n {
        if rng.gen_bool(config.attribute_prob) {
            let (label, value) = ATTRIBUTES[rng.gen_range(0..ATTRIBUTES.len())];
            let a = b.add_node(Node::attribute(value));
            b.add_edge(v, a, label);
        }
    }
    b.finish(0).expect("generated graphs are connected")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let c = RandomGraphConfig::default();
        for seed in 0..50 {
            let g = random_graph(seed, &c);
            assert_eq!(g, random_graph(seed, &c));
            let vars = g.nodes().iter().filter(|n| !n.is_attribute).count();
            assert!((1..=8).contains(&vars));
        }
    }
}
