//! Inference-step and beam-size sweeps, reported as tab-separated tables.

use std::fmt;

use dualamr_graph::{corpus_smatch, strip_wiki, AmrGraph, SmatchConfig};
use serde::Serialize;

use crate::encoders::SentenceInput;
use crate::inference::{parse, DecodeOptions};
use crate::model::Model;
use crate::training::empty_graph;
use dualamr_numeric::NumericError;

/// One evaluation sentence.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub input: SentenceInput,
    /// gold graph with senses; wiki links are ignored when scoring
    pub gold: AmrGraph,
}

impl EvalItem {
    pub fn tokens(&self) -> usize {
        self.input.len() - 1
    }
}

/// Sentences with `lo <= tokens <= hi`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Bucket {
    pub lo: usize,
    pub hi: usize,
}

impl Bucket {
    pub fn contains(&self, n: usize) -> bool {
        (self.lo..=self.hi).contains(&n)
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.hi == usize::MAX {
            write!(f, "{}+", self.lo)
        } else {
            write!(f, "{}-{}", self.lo, self.hi)
        }
    }
}

/// Three length classes cut at the terciles of `lengths`. Classes that
/// would be empty because of ties are dropped.
pub fn tercile_buckets(lengths: &[usize]) -> Vec<Bucket> {
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    if sorted.is_empty() {
        return vec![Bucket { lo: 1, hi: usize::MAX }];
    }
    let n = sorted.len();
    let cut1 = sorted[(n - 1) / 3];
    let cut2 = sorted[(2 * (n - 1)) / 3].max(cut1);
    let mut out = vec![Bucket { lo: 1, hi: cut1 }];
    if cut2 > cut1 {
        out.push(Bucket { lo: cut1 + 1, hi: cut2 });
    }
    if sorted[n - 1] > cut2 {
        out.push(Bucket { lo: cut2 + 1, hi: usize::MAX });
    } else {
        out.last_mut().expect("one bucket").hi = usize::MAX;
    }
    out
}

/// Parses bucket bounds such as `1-10,11-20,21+`.
pub fn parse_buckets(text: &str) -> Result<Vec<Bucket>, String> {
    let mut out: Vec<Bucket> = Vec::new();
    for part in text.split(',').map(str::trim) {
        let num = |s: &str| s.trim().parse::<usize>().map_err(|_| format!("bad bucket `{part}`"));
        let b = if let Some(lo) = part.strip_suffix('+') {
            Bucket {
                lo: num(lo)?,
                hi: usize::MAX,
            }
        } else if let Some((lo, hi)) = part.split_once('-') {
            Bucket {
                lo: num(lo)?,
                hi: num(hi)?,
            }
        } else {
            let n = num(part)?;
            Bucket { lo: n, hi: n }
        };
        if b.lo > b.hi || out.last().is_some_and(|p| p.hi >= b.lo) {
            return Err(format!("buckets must be ascending and disjoint at `{part}`"));
        }
        out.push(b);
    }
    Ok(out)
}

/// Whether the step sweep reuses one model at every N or pairs each N
/// with a model trained at that N.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StepsMode {
    Single,
    Family,
}

impl fmt::Display for StepsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepsMode::Single => "single",
            StepsMode::Family => "family",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepsRow {
    pub mode: StepsMode,
    pub checkpoint: String,
    pub steps: usize,
    pub bucket: String,
    pub sentences: usize,
    /// `None` for an empty bucket
    pub smatch: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeamRow {
    pub beam: usize,
    pub steps: usize,
    pub sentences: usize,
    pub smatch: f64,
    pub mean_nodes: f64,
}

/// Sense-restored predictions, with the placeholder graph for empty parses.
pub fn predict(model: &Model, items: &[EvalItem], opts: &DecodeOptions) -> Result<Vec<AmrGraph>, NumericError> {
    items
        .iter()
        .map(|it| Ok(parse(model, &it.input, opts)?.restored(model).unwrap_or_else(empty_graph)))
        .collect()
}

fn score(pred: &[AmrGraph], gold: &[&AmrGraph], restarts: usize) -> f64 {
    let gold: Vec<AmrGraph> = gold.iter().map(|g| strip_wiki(g)).collect();
    let config = SmatchConfig { restarts, seed: 0 };
    corpus_smatch(pred, &gold, &config).expect("aligned corpora").f1()
}

/// Smatch per (N, length bucket). `models` pairs a name with a model and
/// the N to decode it with; one model under several N is `Single` mode.
pub fn steps_table(
    mode: StepsMode,
    models: &[(String, &Model, usize)],
    items: &[EvalItem],
    buckets: &[Bucket],
    beam: usize,
    restarts: usize,
) -> Result<Vec<StepsRow>, NumericError> {
    let mut rows = Vec::new();
    for (name, model, steps) in models {
        let opts = DecodeOptions {
            steps: *steps,
            beam,
            diagnostics: false,
        };
        let pred = predict(model, items, &opts)?;
        for b in buckets {
            let idx: Vec<usize> = (0..items.len()).filter(|&i| b.contains(items[i].tokens())).collect();
            let p: Vec<AmrGraph> = idx.iter().map(|&i| pred[i].clone()).collect();
            let g: Vec<&AmrGraph> = idx.iter().map(|&i| &items[i].gold).collect();
            rows.push(StepsRow {
                mode,
                checkpoint: name.clone(),
                steps: *steps,
                bucket: b.to_string(),
                sentences: idx.len(),
                smatch: (!idx.is_empty()).then(|| score(&p, &g, restarts)),
            });
        }
    }
    Ok(rows)
}

/// Corpus Smatch at each beam size.
pub fn beam_sweep(
    model: &Model,
    items: &[EvalItem],
    beams: &[usize],
    steps: usize,
    restarts: usize,
) -> Result<Vec<BeamRow>, NumericError> {
    let gold: Vec<&AmrGraph> = items.iter().map(|it| &it.gold).collect();
    beams
        .iter()
        .map(|&beam| {
            let opts = DecodeOptions {
                steps,
                beam,
                diagnostics: false,
            };
            let pred = predict(model, items, &opts)?;
            let nodes: usize = pred.iter().map(AmrGraph::len).sum();
            Ok(BeamRow {
                beam,
                steps,
                sentences: items.len(),
                smatch: if items.is_empty() { 0.0 } else { score(&pred, &gold, restarts) },
                mean_nodes: nodes as f64 / items.len().max(1) as f64,
            })
        })
        .collect()
}

fn fmt_score(s: Option<f64>) -> String {
    s.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"))
}

pub fn steps_tsv(rows: &[StepsRow]) -> String {
    let mut out = String::from("mode\tcheckpoint\tsteps\tbucket\tsentences\tsmatch\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.mode,
            r.checkpoint,
            r.steps,
            r.bucket,
            r.sentences,
            fmt_score(r.smatch)
        ));
    }
    out
}

pub fn beam_tsv(rows: &[BeamRow]) -> String {
    let mut out = String::from("beam\tsteps\tsentences\tsmatch\tmean_nodes\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.4}\t{:.2}\n",
            r.beam, r.steps, r.sentences, r.smatch, r.mean_nodes
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn terciles_split_lengths() {
        let b = tercile_buckets(&[3, 4, 5, 6, 7, 8, 9, 10, 11]);
        assert_eq!(b.len(), 3);
        assert_eq!(b[0], Bucket { lo: 1, hi: 5 });
        assert_eq!(b[1], Bucket { lo: 6, hi: 8 });
        assert_eq!(b[2].lo, 9);
        for n in 1..20 {
            assert_eq!(b.iter().filter(|x| x.contains(n)).count(), 1);
        }
    }

    #[test]
    fn ties_collapse_buckets() {
        let b = tercile_buckets(&[5, 5, 5, 5]);
        assert_eq!(b, vec![Bucket { lo: 1, hi: usize::MAX }]);
        let b = tercile_buckets(&[2, 2, 5, 5, 5, 5]);
        assert_eq!(b.len(), 2);
        assert_eq!(b[0], Bucket { lo: 1, hi: 2 });
        assert!(b[1].contains(100));
    }

    #[test]
    fn bucket_syntax() {
        let b = parse_buckets("1-10, 11-20,21+").unwrap();
        assert_eq!(b[2].to_string(), "21+");
        assert_eq!(b[0].to_string(), "1-10");
        assert!(parse_buckets("5-3").is_err());
        assert!(parse_buckets("1-10,5-20").is_err());
        assert!(parse_buckets("x").is_err());
    }

    #[test]
    fn tables_have_headers_and_na() {
        let rows = vec![StepsRow {
            mode: StepsMode::Single,
            checkpoint: "m".into(),
            steps: 4,
            bucket: "1-5".into(),
            sentences: 0,
            smatch: None,
        }];
        let t = steps_tsv(&rows);
        assert_eq!(t.lines().count(), 2);
        assert!(t.ends_with("single\tm\t4\t1-5\t0\tNA\n"));
    }
}
