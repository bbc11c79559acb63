//! Synthetic corpus of short sentences with hand-written AMR templates.

use std::collections::BTreeSet;

use dualamr_graph::{serialize_penman, GraphBuilder, Node};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::corpus::CorpusRecord;
use crate::model::Model;
use crate::preprocess::{examples, preprocess};
use crate::training::Example;

const NOUNS: [&str; 8] = ["boy", "girl", "teacher", "dog", "cat", "man", "woman", "child"];
const THINGS: [&str; 6] = ["book", "apple", "ball", "house", "song", "letter"];
const ADJECTIVES: [&str; 5] = ["big", "small", "red", "happy", "old"];
/// (lemma, third person singular, frame)
const TRANSITIVE: [(&str, &str, &str); 6] = [
    ("see", "sees", "see-01"),
    ("like", "likes", "like-01"),
    ("find", "finds", "find-01"),
    ("help", "helps", "help-01"),
    ("chase", "chases", "chase-01"),
    ("read", "reads", "read-01"),
];
const INTRANSITIVE: [(&str, &str, &str); 3] = [
    ("sleep", "sleeps", "sleep-01"),
    ("run", "runs", "run-02"),
    ("sing", "sings", "sing-01"),
];

struct Sentence {
    words: Vec<(String, String, String)>,
    graph: GraphBuilder,
}

impl Sentence {
    fn new() -> Self {
        Sentence {
            words: Vec::new(),
            graph: GraphBuilder::new(),
        }
    }

    fn word(&mut self, surface: &str, lemma: &str, pos: &str) {
        self.words.push((surface.into(), lemma.into(), pos.into()));
    }

    fn node(&mut self, label: &str) -> usize {
        self.graph.add_node(Node::concept(label))
    }

    /// `The [adj] noun`; returns the noun node.
    fn noun_phrase(&mut self, noun: &str, adj: Option<&str>) -> usize {
        self.word("the", "the", "DT");
        let n = self.node(noun);
        if let Some(a) = adj {
            self.word(a, a, "JJ");
            let m = self.node(a);
            self.graph.add_edge(n, m, "mod");
        }
        self.word(noun, noun, "NN");
        n
    }
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, xs: &'a [T]) -> &'a T {
    xs.choose(rng).expect("non-empty pool")
}

fn sample(rng: &mut ChaCha8Rng) -> Sentence {
    let mut s = Sentence::new();
    let subject = *pick(rng, &NOUNS);
    let adj = rng.gen_bool(0.3).then(|| *pick(rng, &ADJECTIVES));
    match rng.gen_range(0..5) {
        0 => {
            let (lemma, form, frame) = *pick(rng, &INTRANSITIVE);
            let v = s.node(frame);
            let a = s.noun_phrase(subject, adj);
            s.word(form, lemma, "VBZ");
            s.graph.add_edge(v, a, "ARG0");
        }
        1 => {
            let (lemma, _, frame) = *pick(rng, &TRANSITIVE);
            let v = s.node(frame);
            let a = s.noun_phrase(subject, adj);
            s.word("does", "do", "VBZ");
            s.word("not", "not", "RB");
            s.word(lemma, lemma, "VB");
            let o = s.noun_phrase(pick(rng, &THINGS), None);
            let neg = s.graph.add_node(Node::attribute("-"));
            s.graph.add_edge(v, a, "ARG0");
            s.graph.add_edge(v, o, "ARG1");
            s.graph.add_edge(v, neg, "polarity");
        }
        2 => {
            let (lemma, _, frame) = *pick(rng, &TRANSITIVE);
            let w = s.node("want-01");
            let v = s.node(frame);
            let a = s.noun_phrase(subject, adj);
            s.word("wants", "want", "VBZ");
            s.word("to", "to", "TO");
            s.word(lemma, lemma, "VB");
            let o = s.noun_phrase(pick(rng, &THINGS), None);
            s.graph.add_edge(w, a, "ARG0");
            s.graph.add_edge(w, v, "ARG1");
            s.graph.add_edge(v, a, "ARG0");
            s.graph.add_edge(v, o, "ARG1");
        }
        _ => {
            let (lemma, form, frame) = *pick(rng, &TRANSITIVE);
            let v = s.node(frame);
            let a = s.noun_phrase(subject, adj);
            s.word(form, lemma, "VBZ");
            let pool: &[&str] = if rng.gen_bool(0.5) { &NOUNS } else { &THINGS };
            let obj_adj = rng.gen_bool(0.3).then(|| *pick(rng, &ADJECTIVES));
            let o = s.noun_phrase(pick(rng, pool), obj_adj);
            s.graph.add_edge(v, a, "ARG0");
            s.graph.add_edge(v, o, "ARG1");
        }
    }
    s
}

/// `n` distinct sentences of 3 to 8 tokens with gold graphs (senses kept).
pub fn toy_corpus(n: usize, seed: u64) -> Vec<CorpusRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let s = sample(&mut rng);
        let text: Vec<&str> = s.words.iter().map(|w| w.0.as_str()).collect();
        if !(3..=8).contains(&text.len()) || !seen.insert(text.join(" ")) {
            continue;
        }
        let graph = s.graph.finish(0).expect("templates build valid graphs");
        let col = |k: usize| -> Vec<String> {
            s.words
                .iter()
                .map(|w| match k {
                    0 => w.0.clone(),
                    1 => w.1.clone(),
                    _ => w.2.clone(),
                })
                .collect()
        };
        out.push(CorpusRecord {
            id: format!("toy-{:03}", out.len()),
            tokens: col(0),
            lemmas: col(1),
            pos: col(2),
            ner: vec!["O".to_string(); s.words.len()],
            amr: Some(serialize_penman(&graph)),
            context: None,
        });
    }
    out
}

/// A freshly initialised model for `run` over `n` toy sentences, and the
/// sentences as training examples.
pub fn toy_setup(run: &RunConfig, n: usize, corpus_seed: u64) -> (Model, Vec<Example>) {
    let recs = toy_corpus(n, corpus_seed);
    let p = preprocess(&recs).expect("toy graphs are valid");
    let model = Model::new(run.model.clone(), p.vocabs, p.senses, p.relations, run.train.seed);
    let data = examples(&model, &p.records, None).expect("toy inputs are valid");
    (model, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_shape() {
        let c = toy_corpus(50, 0);
        assert_eq!(c.len(), 50);
        assert!(c.iter().all(|r| (3..=8).contains(&r.tokens.len())));
        let graphs = crate::corpus::gold_graphs(&c).unwrap();
        assert!(graphs.iter().any(|g| g.nodes().iter().any(|n| n.is_attribute)));
        assert!(graphs.iter().any(|g| g.len() >= 5));
        assert_eq!(toy_corpus(50, 0), c);
    }
}
