//! Corpus-level Smatch and a subset of the fine-grained breakdown.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::graph::AmrGraph;
use crate::senses::remove_senses;
use crate::smatch::{smatch_triples, SmatchConfig, TripleSet};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("corpus length mismatch: {pred} predicted vs {gold} gold graphs")]
    LengthMismatch { pred: usize, gold: usize },
}

/// Micro-averaged counts; precision, recall and F1 derive from them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Prf {
    pub matched: usize,
    pub test_total: usize,
    pub gold_total: usize,
}

impl Prf {
    pub fn precision(&self) -> f64 {
        div(self.matched, self.test_total)
    }

    pub fn recall(&self) -> f64 {
        div(self.matched, self.gold_total)
    }

    pub fn f1(&self) -> f64 {
        div(2 * self.matched, self.test_total + self.gold_total)
    }

    fn add(&mut self, matched: usize, test: usize, gold: usize) {
        self.matched += matched;
        self.test_total += test;
        self.gold_total += gold;
    }
}

fn div(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FineGrained {
    pub smatch: Prf,
    pub unlabeled: Prf,
    pub no_wsd: Prf,
    pub concepts: Prf,
}

/// Corpus Smatch only.
pub fn corpus_smatch(
    pred: &[AmrGraph],
    gold: &[AmrGraph],
    config: &SmatchConfig,
) -> Result<Prf, MetricsError> {
    check_lengths(pred, gold)?;
    let mut total = Prf::default();
    for (p, g) in pred.iter().zip(gold) {
        let r = smatch_triples(&TripleSet::from_graph(p), &TripleSet::from_graph(g), config);
        total.add(r.matched, r.test_total, r.gold_total);
    }
    Ok(total)
}

fn check_lengths(pred: &[AmrGraph], gold: &[AmrGraph]) -> Result<(), MetricsError> {
    if pred.len() != gold.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    Ok(())
}

fn concept_bag(g: &AmrGraph) -> BTreeMap<&str, usize> {
    let mut bag = BTreeMap::new();
    for n in g.nodes().iter().filter(|n| !n.is_attribute) {
        *bag.entry(n.label.as_str()).or_insert(0) += 1;
    }
    bag
}

/// Smatch, Unlabeled, No-WSD and Concept scores over aligned corpora.
pub fn fine_grained(
    pred: &[AmrGraph],
    gold: &[AmrGraph],
    config: &SmatchConfig,
) -> Result<FineGrained, MetricsError> {
    check_lengths(pred, gold)?;
    let mut out = FineGrained::default();
    for (p, g) in pred.iter().zip(gold) {
        let (tp, tg) = (TripleSet::from_graph(p), TripleSet::from_graph(g));
        let r = smatch_triples(&tp, &tg, config);
        out.smatch.add(r.matched, r.test_total, r.gold_total);

        let r = smatch_triples(&tp.unlabeled(), &tg.unlabeled(), config);
        out.unlabeled.add(r.matched, r.test_total, r.gold_total);

        let r = smatch_triples(
            &TripleSet::from_graph(&remove_senses(p)),
            &TripleSet::from_graph(&remove_senses(g)),
            config,
        );
        out.no_wsd.add(r.matched, r.test_total, r.gold_total);

        let (bp, bg) = (concept_bag(p), concept_bag(g));
        let matched = bp
            .iter()
            .map(|(c, n)| (*n).min(bg.get(c).copied().unwrap_or(0)))
            .sum();
        out.concepts
            .add(matched, bp.values().sum(), bg.values().sum());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penman::parse_penman;

    fn g(text: &str) -> AmrGraph {
        parse_penman(text).unwrap()
    }

    #[test]
    fn identical_corpora_score_one() {
        let corpus = vec![
            g("(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-02 :ARG0 b))"),
            g("(g / go-02 :polarity -)"),
        ];
        let fg = fine_grained(&corpus, &corpus, &SmatchConfig::default()).unwrap();
        for m in [fg.smatch, fg.unlabeled, fg.no_wsd, fg.concepts] {
            assert_eq!(m.f1(), 1.0);
        }
    }

    #[test]
    fn relabeled_edges_only_hurt_labeled_smatch() {
        let gold = vec![g("(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-02))")];
        let pred = vec![g("(w / want-01 :ARG1 (b / boy) :ARG2 (g / go-02))")];
        let fg = fine_grained(&pred, &gold, &SmatchConfig::default()).unwrap();
        assert_eq!(fg.unlabeled.f1(), 1.0);
        assert!(fg.smatch.f1() < 1.0);
    }

    #[test]
    fn sense_mismatch_is_only_a_wsd_error() {
        let gold = vec![g("(g / go-02 :ARG0 (b / boy))")];
        let pred = vec![g("(g / go-01 :ARG0 (b / boy))")];
        let fg = fine_grained(&pred, &gold, &SmatchConfig::default()).unwrap();
        assert_eq!(fg.no_wsd.f1(), 1.0);
        assert!(fg.smatch.f1() < 1.0);
        assert_eq!(fg.concepts.matched, 1);
    }

    #[test]
    fn length_mismatch() {
        let a = vec![g("(a / alpha)")];
        assert_eq!(
            fine_grained(&a, &[], &SmatchConfig::default()),
            Err(MetricsError::LengthMismatch { pred: 1, gold: 0 })
        );
    }
}
