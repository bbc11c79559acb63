//! Sense-suffix removal and restoration, and wiki stripping.

use std::collections::{BTreeMap, HashSet};

use crate::graph::AmrGraph;

/// `go-02` -> `go`. Only an exact `-NN` suffix (two ASCII digits) counts.
pub fn strip_sense(label: &str) -> &str {
    let b = label.as_bytes();
    let n = b.len();
    if n > 3 && b[n - 3] == b'-' && b[n - 2].is_ascii_digit() && b[n - 1].is_ascii_digit() {
        &label[..n - 3]
    } else {
        label
    }
}

/// Strips sense suffixes from concept nodes. Attribute constants are kept.
pub fn remove_senses(graph: &AmrGraph) -> AmrGraph {
    graph.map_labels(|n| {
        if n.is_attribute {
            n.label.clone()
        } else {
            strip_sense(&n.label).to_string()
        }
    })
}

/// Removes `:wiki` attributes and their constant nodes.
pub fn strip_wiki(graph: &AmrGraph) -> AmrGraph {
    let drop: HashSet<usize> = graph
        .edges()
        .iter()
        .filter(|e| e.label == "wiki" && graph.node(e.target).is_attribute)
        .map(|e| e.target)
        .collect();
    if drop.is_empty() {
        return graph.clone();
    }
    graph.without_nodes(&drop)
}

/// Most frequent full form for every sense-stripped concept.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SenseTable {
    counts: BTreeMap<String, BTreeMap<String, u64>>,
}

impl SenseTable {
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a AmrGraph>) -> Self {
        let mut counts: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        for g in corpus {
            for n in g.nodes().iter().filter(|n| !n.is_attribute) {
                *counts
                    .entry(strip_sense(&n.label).to_string())
                    .or_default()
                    .entry(n.label.clone())
                    .or_insert(0) += 1;
            }
        }
        SenseTable { counts }
    }

    /// Highest count wins; ties go to the lexicographically smallest form.
    pub fn lookup(&self, stripped: &str) -> Option<&str> {
        let forms = self.counts.get(stripped)?;
        let mut best: Option<(&str, u64)> = None;
        for (form, &count) in forms {
            if best.is_none_or(|(_, c)| count > c) {
                best = Some((form, count));
            }
        }
        best.map(|(f, _)| f)
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// `stripped<TAB>full<TAB>count` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (stripped, forms) in &self.counts {
            for (form, count) in forms {
                out.push_str(&format!("{stripped}\t{form}\t{count}\n"));
            }
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, String> {
        let mut counts: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(format!("line {}: expected three columns", i + 1));
            }
            let count: u64 = cols[2]
                .trim()
                .parse()
                .map_err(|_| format!("line {}: bad count", i + 1))?;
            if count == 0 {
                return Err(format!("line {}: count must be positive", i + 1));
            }
            counts
                .entry(cols[0].to_string())
                .or_default()
                .insert(cols[1].to_string(), count);
        }
        Ok(SenseTable { counts })
    }
}

/// Puts back the most frequent sense of every concept node. Concepts the
/// table has never seen stay as they are.
pub fn restore_senses(graph: &AmrGraph, table: &SenseTable) -> AmrGraph {
    graph.map_labels(|n| {
        if n.is_attribute {
            return n.label.clone();
        }
        table
            .lookup(&n.label)
            .map(str::to_string)
            .unwrap_or_else(|| n.label.clone())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penman::parse_penman;

    fn labels(g: &AmrGraph) -> Vec<&str> {
        g.nodes().iter().map(|n| n.label.as_str()).collect()
    }

    #[test]
    fn suffix_pattern() {
        assert_eq!(strip_sense("go-02"), "go");
        assert_eq!(strip_sense("want-01"), "want");
        assert_eq!(strip_sense("boy"), "boy");
        assert_eq!(strip_sense("go-2"), "go-2");
        assert_eq!(strip_sense("go-123"), "go-123");
        assert_eq!(strip_sense("-01"), "-01");
    }

    #[test]
    fn removal_skips_attributes_and_is_idempotent() {
        let g = parse_penman(r#"(g / go-02 :ARG0 (b / boy) :op1 "tt-01")"#).unwrap();
        let once = remove_senses(&g);
        assert_eq!(labels(&once), ["go", "boy", "tt-01"]);
        assert_eq!(remove_senses(&once), once);
    }

    #[test]
    fn most_frequent_sense() {
        let corpus: Vec<AmrGraph> = ["go-02", "go-02", "go-02", "go-01"]
            .iter()
            .map(|c| AmrGraph::single(*c))
            .collect();
        let table = SenseTable::build(&corpus);
        assert_eq!(table.lookup("go"), Some("go-02"));
        let restored = restore_senses(&AmrGraph::single("go"), &table);
        assert_eq!(labels(&restored), ["go-02"]);
        assert_eq!(labels(&restore_senses(&AmrGraph::single("zzz"), &table)), ["zzz"]);
        assert_eq!(SenseTable::from_tsv(&table.to_tsv()).unwrap(), table);
    }

    #[test]
    fn ties_break_lexicographically() {
        let corpus: Vec<AmrGraph> = ["go-02", "go-01", "go-02", "go-01"]
            .iter()
            .map(|c| AmrGraph::single(*c))
            .collect();
        assert_eq!(SenseTable::build(&corpus).lookup("go"), Some("go-01"));
    }

    #[test]
    fn table_rejects_bad_rows() {
        assert!(SenseTable::from_tsv("go\tgo-01\t0\n").is_err());
        assert!(SenseTable::from_tsv("go\tgo-01\n").is_err());
    }

    #[test]
    fn wiki_stripping() {
        let g = parse_penman(
            r#"(p / person :wiki "Barack_Obama" :name (n / name :op1 "Barack" :op2 "Obama"))"#,
        )
        .unwrap();
        let s = strip_wiki(&g);
        assert_eq!(labels(&s), ["person", "name", "Barack", "Obama"]);
        assert!(s.edges().iter().all(|e| e.label != "wiki"));
        assert_eq!(strip_wiki(&s), s);
        let plain = parse_penman("(g / go-02 :ARG0 (b / boy))").unwrap();
        assert_eq!(strip_wiki(&plain), plain);
    }
}
