//! Smatch: triple overlap under the best one-to-one variable mapping.
//!
//! [`smatch`] hill-climbs from a concept-matching start plus random
//! restarts; [`smatch_exact`] enumerates mappings with branch and bound and
//! serves as the oracle for small graphs.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::AmrGraph;

/// Largest smaller-side variable count [`smatch_exact`] accepts.
pub const EXACT_LIMIT: usize = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SmatchError {
    #[error("exact matching needs at most {EXACT_LIMIT} variables on one side, got {0}")]
    TooLarge(usize),
}

/// Instance, relation and attribute triples of one graph. Variables are
/// node positions among the non-attribute nodes; the root contributes a
/// `TOP` attribute carrying its concept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripleSet {
    pub var_count: usize,
    pub instances: Vec<(usize, String)>,
    pub relations: Vec<(String, usize, usize)>,
    pub attributes: Vec<(String, usize, String)>,
}

impl TripleSet {
    pub fn from_graph(graph: &AmrGraph) -> Self {
        let is_var = |id: usize| !graph.node(id).is_attribute || id == graph.root();
        let mut var_of = vec![usize::MAX; graph.len()];
        let mut instances = Vec::new();
        for (id, node) in graph.nodes().iter().enumerate() {
            if is_var(id) {
                var_of[id] = instances.len();
                instances.push((var_of[id], node.label.clone()));
            }
        }
        let mut relations = Vec::new();
        let mut attributes = vec![(
            "TOP".to_string(),
            var_of[graph.root()],
            graph.node(graph.root()).label.clone(),
        )];
        for e in graph.edges() {
            if is_var(e.target) {
                relations.push((e.label.clone(), var_of[e.source], var_of[e.target]));
            } else {
                attributes.push((
                    e.label.clone(),
                    var_of[e.source],
                    graph.node(e.target).label.clone(),
                ));
            }
        }
        TripleSet {
            var_count: instances.len(),
            instances,
            relations,
            attributes,
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len() + self.relations.len() + self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every relation and attribute label (except `TOP`) replaced by one label.
    pub fn unlabeled(&self) -> TripleSet {
        let mut t = self.clone();
        for r in &mut t.relations {
            r.0 = "rel".into();
        }
        for a in t.attributes.iter_mut().filter(|a| a.0 != "TOP") {
            a.0 = "rel".into();
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub matched: usize,
    /// triples in the first (test) graph
    pub test_total: usize,
    /// triples in the second (gold) graph
    pub gold_total: usize,
    /// `mapping[v1] = Some(v2)`
    pub mapping: Vec<Option<usize>>,
}

impl MatchResult {
    pub fn precision(&self) -> f64 {
        ratio(self.matched, self.test_total)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.matched, self.gold_total)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.matched, self.test_total + self.gold_total)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmatchConfig {
    /// Starting points: one concept-matching start plus `restarts - 1` random ones.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SmatchConfig {
    fn default() -> Self {
        SmatchConfig {
            restarts: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct RelEntry {
    a: usize,
    b: usize,
    c: usize,
    d: usize,
    w: u32,
}

/// Pairwise weights between the variables of two triple sets.
struct Problem {
    n1: usize,
    n2: usize,
    node_w: Vec<u32>,
    rel: Vec<RelEntry>,
    by_var: Vec<Vec<usize>>,
}

fn multiset<K: Ord>(items: impl Iterator<Item = K>) -> BTreeMap<K, u32> {
    let mut m = BTreeMap::new();
    for k in items {
        *m.entry(k).or_insert(0) += 1;
    }
    m
}

impl Problem {
    fn new(t1: &TripleSet, t2: &TripleSet) -> Self {
        let (n1, n2) = (t1.var_count, t2.var_count);
        let mut node_w = vec![0u32; n1 * n2];
        for (i, c1) in &t1.instances {
            for (j, c2) in &t2.instances {
                if c1 == c2 {
                    node_w[i * n2 + j] += 1;
                }
            }
        }
        let attrs1 = multiset(t1.attributes.iter().map(|(l, v, c)| (*v, l.as_str(), c.as_str())));
        let mut attrs2: HashMap<(&str, &str), Vec<(usize, u32)>> = HashMap::new();
        for ((v, l, c), n) in multiset(t2.attributes.iter().map(|(l, v, c)| (*v, l.as_str(), c.as_str()))) {
            attrs2.entry((l, c)).or_default().push((v, n));
        }
        for ((i, l, c), n) in &attrs1 {
            if let Some(list) = attrs2.get(&(*l, *c)) {
                for &(j, m) in list {
                    node_w[i * n2 + j] += (*n).min(m);
                }
            }
        }

        let rels1 = multiset(t1.relations.iter().map(|(l, a, b)| (l.as_str(), *a, *b)));
        let mut rels2: HashMap<&str, Vec<(usize, usize, u32)>> = HashMap::new();
        for ((l, c, d), n) in multiset(t2.relations.iter().map(|(l, a, b)| (l.as_str(), *a, *b))) {
            rels2.entry(l).or_default().push((c, d, n));
        }
        let mut combined: BTreeMap<(usize, usize, usize, usize), u32> = BTreeMap::new();
        for ((l, a, b), n) in &rels1 {
            if let Some(list) = rels2.get(l) {
                for &(c, d, m) in list {
                    *combined.entry((*a, *b, c, d)).or_insert(0) += (*n).min(m);
                }
            }
        }
        let rel: Vec<RelEntry> = combined
            .into_iter()
            .map(|((a, b, c, d), w)| RelEntry { a, b, c, d, w })
            .collect();
        let mut by_var = vec![Vec::new(); n1];
        for (k, e) in rel.iter().enumerate() {
            by_var[e.a].push(k);
            if e.b != e.a {
                by_var[e.b].push(k);
            }
        }
        Problem {
            n1,
            n2,
            node_w,
            rel,
            by_var,
        }
    }

    fn node(&self, i: usize, j: Option<usize>) -> u32 {
        j.map_or(0, |j| self.node_w[i * self.n2 + j])
    }

    fn entry_hits(&self, e: &RelEntry, mapping: &[Option<usize>]) -> u32 {
        if mapping[e.a] == Some(e.c) && mapping[e.b] == Some(e.d) {
            e.w
        } else {
            0
        }
    }

    fn score(&self, mapping: &[Option<usize>]) -> u32 {
        let nodes: u32 = (0..self.n1).map(|i| self.node(i, mapping[i])).sum();
        let rels: u32 = self.rel.iter().map(|e| self.entry_hits(e, mapping)).sum();
        nodes + rels
    }

    /// Score restricted to terms that involve any of `vars`.
    fn local(&self, mapping: &[Option<usize>], vars: &[usize]) -> u32 {
        let mut total = 0;
        for (pos, &i) in vars.iter().enumerate() {
            total += self.node(i, mapping[i]);
            for &k in &self.by_var[i] {
                let e = &self.rel[k];
                let other = if e.a == i { e.b } else { e.a };
                if vars[..pos].contains(&other) {
                    continue;
                }
                total += self.entry_hits(e, mapping);
            }
        }
        total
    }

    fn hill_climb(&self, mapping: &mut [Option<usize>]) {
        let mut owner = vec![None; self.n2];
        for (i, j) in mapping.iter().enumerate() {
            if let Some(j) = j {
                owner[*j] = Some(i);
            }
        }
        let mut current = self.score(mapping);
        let mut best = (current, mapping.to_vec());
        let mut visited = HashSet::from([mapping.to_vec()]);
        let mut sideways = 0;
        loop {
            let mut step: Option<(u32, Vec<Option<usize>>, Vec<Option<usize>>)> = None;
            // plateau moves are allowed until `n1` of them happen in a row
            let floor = if sideways < self.n1 { current } else { current + 1 };
            let mut consider = |m: Vec<Option<usize>>, o: Vec<Option<usize>>, s: u32| {
                if s >= floor
                    && !visited.contains(&m)
                    && step.as_ref().is_none_or(|(b, _, _)| s > *b)
                {
                    step = Some((s, m, o));
                }
            };
            for i in 0..self.n1 {
                for j in 0..self.n2 {
                    if mapping[i] == Some(j) {
                        continue;
                    }
                    let vars: Vec<usize> = std::iter::once(i).chain(owner[j]).collect();
                    let before = self.local(mapping, &vars);
                    let (mut m, mut o) = (mapping.to_vec(), owner.clone());
                    assign(&mut m, &mut o, i, j);
                    let s = current + self.local(&m, &vars) - before;
                    consider(m, o, s);
                }
            }
            // A relation match can need both endpoints moved at once; each
            // single move on the way may lose an instance match.
            for e in &self.rel {
                if mapping[e.a] == Some(e.c) && mapping[e.b] == Some(e.d) {
                    continue;
                }
                let (mut m, mut o) = (mapping.to_vec(), owner.clone());
                assign(&mut m, &mut o, e.a, e.c);
                assign(&mut m, &mut o, e.b, e.d);
                let s = self.score(&m);
                consider(m, o, s);
            }
            let Some((s, m, o)) = step else { break };
            if s > current {
                sideways = 0;
            } else {
                sideways += 1;
            }
            current = s;
            mapping.copy_from_slice(&m);
            owner = o;
            visited.insert(m);
            if current > best.0 {
                best = (current, mapping.to_vec());
            }
        }
        mapping.copy_from_slice(&best.1);
    }

    /// Greedy start: each variable takes the first free partner with the
    /// same concept, preferring the pair that also matches attributes.
    fn smart_start(&self) -> Vec<Option<usize>> {
        let mut mapping = vec![None; self.n1];
        let mut used = vec![false; self.n2];
        for (i, slot) in mapping.iter_mut().enumerate() {
            let best = (0..self.n2)
                .filter(|&j| !used[j] && self.node_w[i * self.n2 + j] > 0)
                .max_by_key(|&j| (self.node_w[i * self.n2 + j], std::cmp::Reverse(j)));
            if let Some(j) = best {
                used[j] = true;
                *slot = Some(j);
            }
        }
        mapping
    }

    fn random_start(&self, rng: &mut ChaCha8Rng) -> Vec<Option<usize>> {
        let mut targets: Vec<usize> = (0..self.n2).collect();
        targets.shuffle(rng);
        let mut order: Vec<usize> = (0..self.n1).collect();
        order.shuffle(rng);
        let mut mapping = vec![None; self.n1];
        for (i, j) in order.into_iter().zip(targets) {
            mapping[i] = Some(j);
        }
        mapping
    }

    fn exact(&self) -> (u32, Vec<Option<usize>>) {
        // n1 <= n2 here, so total injective mappings are enough
        let mut by_max: Vec<Vec<usize>> = vec![Vec::new(); self.n1];
        for (k, e) in self.rel.iter().enumerate() {
            by_max[e.a.max(e.b)].push(k);
        }
        let mut suffix = vec![0u32; self.n1 + 1];
        for i in (0..self.n1).rev() {
            let node_max = (0..self.n2).map(|j| self.node_w[i * self.n2 + j]).max().unwrap_or(0);
            let rel_max: u32 = by_max[i].iter().map(|&k| self.rel[k].w).sum();
            suffix[i] = suffix[i + 1] + node_max + rel_max;
        }
        let mut search = ExactSearch {
            p: self,
            by_max,
            suffix,
            mapping: vec![None; self.n1],
            used: vec![false; self.n2],
            best: 0,
            best_mapping: vec![None; self.n1],
        };
        // any total mapping is a valid starting bound
        let mut start = self.smart_start();
        self.hill_climb(&mut start);
        search.best = self.score(&start);
        search.best_mapping = start;
        search.dfs(0, 0);
        (search.best, search.best_mapping)
    }
}

struct ExactSearch<'a> {
    p: &'a Problem,
    by_max: Vec<Vec<usize>>,
    suffix: Vec<u32>,
    mapping: Vec<Option<usize>>,
    used: Vec<bool>,
    best: u32,
    best_mapping: Vec<Option<usize>>,
}

impl ExactSearch<'_> {
    fn dfs(&mut self, i: usize, score: u32) {
        if i == self.p.n1 {
            if score > self.best {
                self.best = score;
                self.best_mapping = self.mapping.clone();
            }
            return;
        }
        if score + self.suffix[i] <= self.best {
            return;
        }
        for j in 0..self.p.n2 {
            if self.used[j] {
                continue;
            }
            self.used[j] = true;
            self.mapping[i] = Some(j);
            let mut gain = self.p.node(i, Some(j));
            for &k in &self.by_max[i] {
                gain += self.p.entry_hits(&self.p.rel[k], &self.mapping);
            }
            self.dfs(i + 1, score + gain);
            self.mapping[i] = None;
            self.used[j] = false;
        }
    }
}

/// Maps `i` to `j`, swapping with whoever held `j`.
fn assign(mapping: &mut [Option<usize>], owner: &mut [Option<usize>], i: usize, j: usize) {
    if mapping[i] == Some(j) {
        return;
    }
    match owner[j] {
        None => {
            if let Some(old) = mapping[i] {
                owner[old] = None;
            }
            mapping[i] = Some(j);
            owner[j] = Some(i);
        }
        Some(k) => {
            mapping.swap(i, k);
            if let Some(jk) = mapping[k] {
                owner[jk] = Some(k);
            }
            owner[j] = Some(i);
        }
    }
}

fn invert(mapping: &[Option<usize>], n: usize) -> Vec<Option<usize>> {
    let mut out = vec![None; n];
    for (i, j) in mapping.iter().enumerate() {
        if let Some(j) = j {
            out[*j] = Some(i);
        }
    }
    out
}

/// Hill-climbing Smatch of `test` against `gold`.
pub fn smatch(test: &AmrGraph, gold: &AmrGraph, config: &SmatchConfig) -> MatchResult {
    smatch_triples(&TripleSet::from_graph(test), &TripleSet::from_graph(gold), config)
}

pub fn smatch_triples(t1: &TripleSet, t2: &TripleSet, config: &SmatchConfig) -> MatchResult {
    let p = Problem::new(t1, t2);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(u32, Vec<Option<usize>>)> = None;
    for restart in 0..config.restarts.max(1) {
        let mut mapping = if restart == 0 {
            p.smart_start()
        } else {
            p.random_start(&mut rng)
        };
        p.hill_climb(&mut mapping);
        let s = p.score(&mapping);
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, mapping));
        }
    }
    let (matched, mapping) = best.expect("at least one restart");
    MatchResult {
        matched: matched as usize,
        test_total: t1.len(),
        gold_total: t2.len(),
        mapping,
    }
}

/// Provably optimal Smatch by exhaustive search over injective mappings.
pub fn smatch_exact(test: &AmrGraph, gold: &AmrGraph) -> Result<MatchResult, SmatchError> {
    smatch_exact_triples(&TripleSet::from_graph(test), &TripleSet::from_graph(gold))
}

pub fn smatch_exact_triples(t1: &TripleSet, t2: &TripleSet) -> Result<MatchResult, SmatchError> {
    let smaller = t1.var_count.min(t2.var_count);
    if smaller > EXACT_LIMIT {
        return Err(SmatchError::TooLarge(smaller));
    }
    let (matched, mapping) = if t1.var_count <= t2.var_count {
        Problem::new(t1, t2).exact()
    } else {
        let (m, back) = Problem::new(t2, t1).exact();
        (m, invert(&back, t1.var_count))
    };
    Ok(MatchResult {
        matched: matched as usize,
        test_total: t1.len(),
        gold_total: t2.len(),
        mapping,
    })
}
