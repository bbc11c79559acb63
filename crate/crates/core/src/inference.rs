//! Expansion-by-expansion decoding: per-sentence session, one expansion of
//! `N` reasoning rounds, greedy and beam search.

use std::sync::Arc;

use dualamr_graph::{is_inverse_label, restore_senses, steps_to_graph, AmrGraph, OracleStep, EOG};
use dualamr_numeric::ndarray::s;
use dualamr_numeric::{Array2, NumericError, Tape};
use serde::Serialize;

use crate::encoders::{GraphMemory, SentenceInput, TextMemory};
use crate::model::Model;
use crate::solvers::{concept_candidates, extract_edges, Calls, SolverInputs};
use crate::vocab::UNK_ID;

/// Everything about one sentence that stays fixed while its graph grows.
#[derive(Debug, Clone)]
pub struct Session<'m> {
    pub model: &'m Model,
    pub input: SentenceInput,
    pub text: TextMemory,
    h0: Arc<Array2<f64>>,
    keys: Arc<Array2<f64>>,
    values: Arc<Array2<f64>>,
}

/// Attention readouts of one reasoning round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundTrace {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Outcome of one expansion before any concept is committed.
#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    /// deduplicated, most probable first
    pub candidates: Vec<(String, f64)>,
    pub switch: [f64; 3],
    /// vocabulary-channel distribution
    pub pv: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub beta_heads: Vec<Vec<f64>>,
    /// `(node index, label, label probability)` for a non-EOG concept
    pub sources: Vec<(usize, String, f64)>,
    /// sum of log edge and label probabilities of `sources`
    pub edge_score: f64,
    /// label distribution toward every existing node
    pub label_probs: Vec<Vec<f64>>,
    pub trace: Vec<RoundTrace>,
    pub calls: Calls,
}

impl Model {
    /// `h_0 .. h_n` of one sentence.
    pub fn encode_text(&self, input: &SentenceInput) -> Result<Arc<Array2<f64>>, NumericError> {
        let mut t = Tape::new(&self.store);
        let h = self.net.text.forward(&mut t, input)?;
        t.check()?;
        Ok(t.value_arc(h))
    }

    pub fn session(&self, input: &SentenceInput) -> Result<Session<'_>, NumericError> {
        let h = self.encode_text(input)?;
        let text = self.net.graph.text_memory(&self.store, h.clone());
        let mut t = Tape::new(&self.store);
        let tokens = t.constant(h.slice(s![1.., ..]).to_owned());
        let (k, v) = self.net.solvers.concept.project_text(&mut t, tokens);
        Ok(Session {
            model: self,
            input: input.clone(),
            text,
            h0: Arc::new(h.slice(s![0..1, ..]).to_owned()),
            keys: t.value_arc(k),
            values: t.value_arc(v),
        })
    }
}

fn row(a: &Array2<f64>) -> Vec<f64> {
    a.row(0).to_vec()
}

impl Session<'_> {
    pub fn start(&self) -> Result<GraphMemory, NumericError> {
        let m = self.model;
        m.net.graph.start(&m.store, &m.vocabs, &self.text)
    }

    pub fn extend(&self, mem: &GraphMemory, concept: &str) -> Result<GraphMemory, NumericError> {
        let m = self.model;
        m.net.graph.extend(&m.store, &m.vocabs, mem, concept, &self.text)
    }

    /// Runs `steps` rounds against the current graph and reads off concept
    /// candidates, sources and their labels.
    pub fn expand(&self, mem: &GraphMemory, steps: usize) -> Result<Expansion, NumericError> {
        let m = self.model;
        let solvers = &m.net.solvers;
        let mut t = Tape::new(&m.store);
        let x0 = t.constant_arc(self.h0.clone());
        let text_keys = t.constant_arc(self.keys.clone());
        let text_values = t.constant_arc(self.values.clone());
        let s = t.constant_arc(mem.s.clone());
        let (graph_keys, graph_values) = solvers.relation.project_graph(&mut t, s);
        let mut calls = Calls::default();
        let inputs = SolverInputs {
            text_keys,
            text_values,
            graph_keys,
            graph_values,
        };
        let r = solvers.iterate(&mut t, x0, inputs, None, steps, &mut calls)?;
        let (pv, sw) = solvers.concept.distribution(&mut t, r.mlp);
        let nodes = mem.len() - 1;
        let labels = (nodes > 0).then(|| {
            let xs = t.gather(r.x, &vec![0; nodes]);
            let ss = t.slice_rows(s, 1, nodes);
            solvers.labeler.probabilities(&mut t, xs, ss)
        });
        t.check()?;

        let sw = t.value(sw);
        let switch = [sw[[0, 0]], sw[[0, 1]], sw[[0, 2]]];
        let alpha = row(t.value(r.alpha));
        let beta = row(t.value(r.beta));
        let beta_heads: Vec<Vec<f64>> = r.beta_heads.iter().map(|&b| row(t.value(b))).collect();
        let pv = row(t.value(pv));
        let label_probs: Vec<Vec<f64>> = match labels {
            Some(l) => t.value(l).rows().into_iter().map(|r| r.to_vec()).collect(),
            None => Vec::new(),
        };
        let candidates = concept_candidates(
            &pv,
            switch,
            &alpha,
            &m.vocabs.concept,
            &self.input.lemmas,
            &self.input.tokens,
        );
        let mut sources = Vec::new();
        let mut edge_score = 0.0;
        for src in extract_edges(&beta_heads, &beta, nodes == 0) {
            let dist = &label_probs[src - 1];
            let best = if dist.len() > 1 {
                1 + crate::solvers::argmax(&dist[1..])
            } else {
                UNK_ID
            };
            edge_score += beta[src].ln() + dist[best].ln();
            sources.push((src - 1, m.vocabs.labels.item(best).to_string(), dist[best]));
        }
        let trace = r
            .trace
            .iter()
            .map(|rv| RoundTrace {
                alpha: row(t.value(rv.alpha)),
                beta: row(t.value(rv.beta_max)),
            })
            .collect();
        Ok(Expansion {
            candidates,
            switch,
            pv,
            alpha,
            beta,
            beta_heads,
            sources,
            edge_score,
            label_probs,
            trace,
            calls,
        })
    }

    /// Largest number of nodes a parse may produce.
    pub fn node_cap(&self) -> usize {
        2 * self.input.len() + 10
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeOptions {
    pub steps: usize,
    pub beam: usize,
    pub diagnostics: bool,
}

/// One committed expansion, for diagnostics dumps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub concept: String,
    pub candidates: Vec<(String, f64)>,
    pub sources: Vec<(usize, String)>,
    pub rounds: Vec<RoundTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub steps: Vec<OracleStep>,
    /// sense-stripped graph; `None` when the first prediction was EOG
    pub graph: Option<AmrGraph>,
    pub score: f64,
    pub hit_cap: bool,
    pub calls: Calls,
    pub diagnostics: Vec<StepRecord>,
}

impl Decoded {
    /// Node count of the produced graph.
    pub fn nodes(&self) -> usize {
        self.steps.len()
    }

    /// The graph with senses restored, or `None` for an empty parse.
    pub fn restored(&self, model: &Model) -> Option<AmrGraph> {
        self.graph.as_ref().map(|g| restore_senses(g, &model.senses))
    }
}

#[derive(Debug, Clone)]
struct Item {
    mem: GraphMemory,
    pending: Option<String>,
    steps: Vec<OracleStep>,
    score: f64,
    calls: Calls,
    diagnostics: Vec<StepRecord>,
    hit_cap: bool,
}

impl Item {
    fn add_calls(&mut self, c: Calls) {
        self.calls.concept += c.concept;
        self.calls.relation += c.relation;
    }
}

fn record(step: usize, concept: &str, e: &Expansion, sources: &[(usize, String)]) -> StepRecord {
    StepRecord {
        step,
        concept: concept.to_string(),
        candidates: e.candidates.iter().take(5).cloned().collect(),
        sources: sources.to_vec(),
        rounds: e.trace.clone(),
    }
}

/// Expands `item` (committing its pending concept first) and returns the
/// expansion plus the item with memory caught up.
fn advance(session: &Session, mut item: Item, opts: &DecodeOptions) -> Result<(Item, Expansion), NumericError> {
    if let Some(c) = item.pending.take() {
        item.mem = session.extend(&item.mem, &c)?;
    }
    let e = session.expand(&item.mem, opts.steps)?;
    item.add_calls(e.calls);
    Ok((item, e))
}

/// Child of `item` that commits `concept` with probability `p`. For EOG the
/// child is the finished parse.
fn branch(item: &Item, e: &Expansion, concept: &str, p: f64, opts: &DecodeOptions) -> Item {
    let mut child = item.clone();
    child.score += p.ln();
    if concept == EOG {
        if opts.diagnostics {
            child.diagnostics.push(record(item.steps.len(), concept, e, &[]));
        }
        return child;
    }
    child.score += e.edge_score;
    let sources: Vec<(usize, String)> = e.sources.iter().map(|(i, l, _)| (*i, l.clone())).collect();
    if opts.diagnostics {
        child.diagnostics.push(record(item.steps.len(), concept, e, &sources));
    }
    child.steps.push(OracleStep {
        index: item.steps.len(),
        concept: concept.to_string(),
        is_attribute: false,
        sources,
    });
    child.pending = Some(concept.to_string());
    child
}

fn finish(model: &Model, item: Item) -> Decoded {
    let graph = assemble(model, &item.steps);
    Decoded {
        steps: item.steps,
        graph,
        score: item.score,
        hit_cap: item.hit_cap,
        calls: item.calls,
        diagnostics: item.diagnostics,
    }
}

/// Builds the graph of committed steps. Labels mostly seen as constants
/// become attributes unless they are the root or have outgoing edges.
pub fn assemble(model: &Model, steps: &[OracleStep]) -> Option<AmrGraph> {
    if steps.is_empty() {
        return None;
    }
    let mut steps = steps.to_vec();
    let mut has_outgoing = vec![false; steps.len()];
    for s in &steps {
        for (src, label) in &s.sources {
            if is_inverse_label(label) {
                has_outgoing[s.index] = true;
            } else {
                has_outgoing[*src] = true;
            }
        }
    }
    for (i, s) in steps.iter_mut().enumerate() {
        s.is_attribute = i > 0 && !has_outgoing[i] && model.vocabs.is_attribute_label(&s.concept);
    }
    Some(steps_to_graph(&steps).expect("decoded steps always form a connected graph"))
}

fn initial(session: &Session) -> Result<Item, NumericError> {
    Ok(Item {
        mem: session.start()?,
        pending: None,
        steps: Vec::new(),
        score: 0.0,
        calls: Calls::default(),
        diagnostics: Vec::new(),
        hit_cap: false,
    })
}

/// Commits the most probable concept at every expansion until EOG.
pub fn parse_greedy(session: &Session, opts: &DecodeOptions) -> Result<Decoded, NumericError> {
    let cap = session.node_cap();
    let mut item = initial(session)?;
    loop {
        let (cur, e) = advance(session, item, opts)?;
        let (concept, p) = e.candidates[0].clone();
        let next = branch(&cur, &e, &concept, p, opts);
        if concept == EOG {
            return Ok(finish(session.model, next));
        }
        if cur.steps.len() == cap {
            let mut cur = cur;
            cur.hit_cap = true;
            return Ok(finish(session.model, cur));
        }
        item = next;
    }
}

/// Beam search over concept choices. Each live item branches on its `k`
/// best concepts; EOG retires an item. Search stops once no live item can
/// still beat the best retired one.
pub fn parse_beam(session: &Session, opts: &DecodeOptions) -> Result<Decoded, NumericError> {
    assert!(opts.beam >= 1, "beam size must be positive");
    let cap = session.node_cap();
    let mut live = vec![initial(session)?];
    let mut done: Vec<Item> = Vec::new();
    while !live.is_empty() {
        let mut children = Vec::new();
        for item in live {
            let (cur, e) = advance(session, item, opts)?;
            let mut capped = false;
            let mut produced = false;
            for (concept, p) in e.candidates.iter().take(opts.beam) {
                if *p <= 0.0 {
                    continue;
                }
                produced = true;
                if concept == EOG {
                    done.push(branch(&cur, &e, concept, *p, opts));
                } else if cur.steps.len() == cap {
                    capped = true;
                } else {
                    children.push(branch(&cur, &e, concept, *p, opts));
                }
            }
            if capped || !produced {
                let mut cur = cur;
                cur.hit_cap = true;
                done.push(cur);
            }
        }
        children.sort_by(|a, b| b.score.total_cmp(&a.score));
        children.truncate(opts.beam);
        let best_done = done.iter().map(|d| d.score).fold(f64::NEG_INFINITY, f64::max);
        if children.first().is_some_and(|c| c.score <= best_done) {
            break;
        }
        live = children;
    }
    let mut best: Option<Item> = None;
    for d in done {
        if best.as_ref().is_none_or(|b| d.score > b.score) {
            best = Some(d);
        }
    }
    Ok(finish(session.model, best.expect("search retires at least one item")))
}

/// Greedy for a beam of one, beam search otherwise.
pub fn parse(model: &Model, input: &SentenceInput, opts: &DecodeOptions) -> Result<Decoded, NumericError> {
    let session = model.session(input)?;
    if opts.beam <= 1 {
        parse_greedy(&session, opts)
    } else {
        parse_beam(&session, opts)
    }
}
