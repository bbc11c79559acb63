//! The AMR graph data model.
//!
//! Node ids are positions in insertion order. Edges are stored in their
//! canonical (forward) direction; inverse `-of` roles only exist in text
//! and in oracle steps.

use std::collections::{HashSet, VecDeque};

use thiserror::Error;

/// Roles that end in `-of` without being inverses.
const NON_INVERSE_OF: [&str; 3] = ["consist-of", "prep-out-of", "prep-on-behalf-of"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("graph has no nodes")]
    Empty,
    #[error("node id {0} out of range")]
    NodeOutOfRange(usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge {from} -{label}-> {to}")]
    DuplicateEdge {
        from: usize,
        to: usize,
        label: String,
    },
    #[error("attribute node {0} has an outgoing edge")]
    AttributeWithOutgoing(usize),
    #[error("graph is not connected: node {0} unreachable from the root")]
    Disconnected(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Node {
    pub label: String,
    pub is_attribute: bool,
}

impl Node {
    pub fn concept(label: impl Into<String>) -> Self {
        Node {
            label: label.into(),
            is_attribute: false,
        }
    }

    pub fn attribute(label: impl Into<String>) -> Self {
        Node {
            label: label.into(),
            is_attribute: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub label: String,
}

/// A rooted, directed, labeled, connected graph of concepts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AmrGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    root: usize,
}

/// True when `label` is an inverse role such as `ARG0-of`.
pub fn is_inverse_label(label: &str) -> bool {
    label.ends_with("-of") && !NON_INVERSE_OF.contains(&label)
}

/// `ARG0` <-> `ARG0-of`; `consist-of` inverts to `consist-of-of`.
pub fn invert_label(label: &str) -> String {
    if is_inverse_label(label) {
        label[..label.len() - 3].to_string()
    } else {
        format!("{label}-of")
    }
}

impl AmrGraph {
    /// Builds a graph and checks every structural invariant.
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>, root: usize) -> Result<Self, GraphError> {
        let g = AmrGraph { nodes, edges, root };
        g.validate()?;
        Ok(g)
    }

    pub fn single(label: impl Into<String>) -> Self {
        AmrGraph {
            nodes: vec![Node::concept(label)],
            edges: Vec::new(),
            root: 0,
        }
    }

    fn validate(&self) -> Result<(), GraphError> {
        if self.nodes.is_empty() {
            return Err(GraphError::Empty);
        }
        let n = self.nodes.len();
        if self.root >= n {
            return Err(GraphError::NodeOutOfRange(self.root));
        }
        let mut seen = HashSet::new();
        for e in &self.edges {
            for id in [e.source, e.target] {
                if id >= n {
                    return Err(GraphError::NodeOutOfRange(id));
                }
            }
            if e.source == e.target {
                return Err(GraphError::SelfLoop(e.source));
            }
            if self.nodes[e.source].is_attribute {
                return Err(GraphError::AttributeWithOutgoing(e.source));
            }
            if !seen.insert((e.source, e.target, e.label.as_str())) {
                return Err(GraphError::DuplicateEdge {
                    from: e.source,
                    to: e.target,
                    label: e.label.clone(),
                });
            }
        }
        let reached = self.reachable_undirected();
        if let Some(missing) = reached.iter().position(|r| !r) {
            return Err(GraphError::Disconnected(missing));
        }
        Ok(())
    }

    fn reachable_undirected(&self) -> Vec<bool> {
        let adjacency = self.adjacency();
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([self.root]);
        seen[self.root] = true;
        while let Some(u) = queue.pop_front() {
            for &(v, _, _) in &adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    /// Undirected adjacency: for every node, `(neighbor, edge index, outgoing)`
    /// in edge-list order.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize, bool)>> {
        let mut adjacency = vec![Vec::new(); self.nodes.len()];
        for (i, e) in self.edges.iter().enumerate() {
            adjacency[e.source].push((e.target, i, true));
            adjacency[e.target].push((e.source, i, false));
        }
        adjacency
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Rewrites node labels; attribute flags and structure are kept.
    pub fn map_labels(&self, mut f: impl FnMut(&Node) -> String) -> AmrGraph {
        let nodes = self
            .nodes
            .iter()
            .map(|n| Node {
                label: f(n),
                is_attribute: n.is_attribute,
            })
            .collect();
        AmrGraph {
            nodes,
            edges: self.edges.clone(),
            root: self.root,
        }
    }

    /// Drops the given nodes and every edge touching them, renumbering the
    /// survivors in order. The caller guarantees the result stays connected.
    pub(crate) fn without_nodes(&self, drop: &HashSet<usize>) -> AmrGraph {
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut nodes = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if !drop.contains(&i) {
                remap[i] = nodes.len();
                nodes.push(n.clone());
            }
        }
        let edges = self
            .edges
            .iter()
            .filter(|e| !drop.contains(&e.source) && !drop.contains(&e.target))
            .map(|e| Edge {
                source: remap[e.source],
                target: remap[e.target],
                label: e.label.clone(),
            })
            .collect();
        AmrGraph {
            nodes,
            edges,
            root: remap[self.root],
        }
    }
}

/// Incremental construction with validation deferred to [`GraphBuilder::finish`].
#[derive(Debug, Clone, Default)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    edge_set: HashSet<(usize, usize, String)>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, node: Node) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    /// Adds an edge; returns false when the same triple is already present.
    pub fn add_edge(&mut self, source: usize, target: usize, label: impl Into<String>) -> bool {
        let label = label.into();
        if !self.edge_set.insert((source, target, label.clone())) {
            return false;
        }
        self.edges.push(Edge {
            source,
            target,
            label,
        });
        true
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node_mut(&mut self, id: usize) -> &mut Node {
        &mut self.nodes[id]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn finish(self, root: usize) -> Result<AmrGraph, GraphError> {
        AmrGraph::new(self.nodes, self.edges, root)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_labels() {
        assert!(is_inverse_label("ARG0-of"));
        assert!(!is_inverse_label("ARG0"));
        assert!(!is_inverse_label("consist-of"));
        assert_eq!(invert_label("ARG0"), "ARG0-of");
        assert_eq!(invert_label("ARG0-of"), "ARG0");
        assert_eq!(invert_label("consist-of"), "consist-of-of");
        assert_eq!(invert_label("consist-of-of"), "consist-of");
    }

    #[test]
    fn rejects_invariant_violations() {
        let two = || vec![Node::concept("a"), Node::concept("b")];
        let e = |s, t, l: &str| Edge {
            source: s,
            target: t,
            label: l.into(),
        };
        assert_eq!(AmrGraph::new(vec![], vec![], 0), Err(GraphError::Empty));
        assert_eq!(
            AmrGraph::new(two(), vec![e(0, 0, "r"), e(0, 1, "r")], 0),
            Err(GraphError::SelfLoop(0))
        );
        assert!(matches!(
            AmrGraph::new(two(), vec![e(0, 1, "r"), e(0, 1, "r")], 0),
            Err(GraphError::DuplicateEdge { .. })
        ));
        assert_eq!(
            AmrGraph::new(two(), vec![], 0),
            Err(GraphError::Disconnected(1))
        );
        let attr = vec![Node::attribute("-"), Node::concept("b")];
        assert_eq!(
            AmrGraph::new(attr, vec![e(0, 1, "r")], 1),
            Err(GraphError::AttributeWithOutgoing(0))
        );
        // parallel edges with distinct labels are fine, and direction does not matter
        // for connectivity
        assert!(AmrGraph::new(two(), vec![e(1, 0, "r"), e(1, 0, "s")], 0).is_ok());
    }
}
