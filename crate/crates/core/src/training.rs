//! Teacher-forced training: oracle orders, input masking, the per-sentence
//! loss, the optimizer loop with dev-based early stopping, and resumable
//! trainer state.

use std::collections::BTreeMap;

use dualamr_graph::{
    bfs_order, corpus_smatch, AmrGraph, OracleError, OracleStep, SiblingOrder, SmatchConfig, EOG,
};
use dualamr_numeric::{clip_global_norm, Adam, Array2, Checkpoint, NumericError, Tape, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::encoders::{causal_mask, SentenceInput};
use crate::inference::{parse_greedy, DecodeOptions};
use crate::model::Model;
use crate::solvers::{concept_probability, Calls, SolverInputs};
use crate::vocab::{BOG, BOG_ID, UNK_ID};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("non-finite loss at step {step} on example {id}")]
    NonFinite { step: usize, id: String },
    #[error("trainer state: {0}")]
    State(String),
    #[error("empty training corpus")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// fair coin per example between random and frequency-sorted siblings
    Mixed,
    Deterministic,
}

/// SplitMix64 over a sequence of words; used to derive independent
/// per-step, per-example seeds.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = 0x243f_6a88_85a3_08d3u64;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

/// The coin flip of the mixed phase: `true` means random sibling order.
pub fn random_order_coin(seed: u64) -> bool {
    ChaCha8Rng::seed_from_u64(seed).gen_bool(0.5)
}

pub fn make_oracle(
    graph: &AmrGraph,
    phase: Phase,
    seed: u64,
    freq: &dualamr_graph::RelationFrequency,
) -> Result<Vec<OracleStep>, OracleError> {
    let order = match phase {
        Phase::Mixed if random_order_coin(seed) => SiblingOrder::Random(derive_seed(&[seed, 1])),
        _ => SiblingOrder::FrequencySorted,
    };
    bfs_order(graph, order, freq)
}

/// Replaces lemma, POS and NER ids by UNK, each independently with
/// probability `rate`. The BOS position, surfaces and characters are kept.
pub fn mask_features(input: &SentenceInput, rate: f64, seed: u64) -> SentenceInput {
    let mut out = input.clone();
    if rate == 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 1..=input.len() {
        for col in [&mut out.lemma_ids, &mut out.pos_ids, &mut out.ner_ids] {
            if rng.gen::<f64>() < rate {
                col[i] = UNK_ID;
            }
        }
    }
    out
}

/// `d^-0.5 * min(step^-0.5, step * warmup^-1.5)`.
pub fn lr_schedule(step: usize, warmup: usize, d: usize) -> f64 {
    assert!(step >= 1, "steps count from 1");
    let s = step as f64;
    (d as f64).powf(-0.5) * s.powf(-0.5).min(s * (warmup as f64).powf(-1.5))
}

/// Loss terms of one sentence, summed over its expansion steps.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub concept: Var,
    pub edge: Var,
    pub label: Var,
    pub total: Var,
}

fn zero(t: &mut Tape) -> Var {
    t.constant(Array2::zeros((1, 1)))
}

fn neg_log_sum(t: &mut Tape, probs: Var) -> Var {
    let l = t.ln(probs);
    let s = t.sum(l);
    t.neg(s)
}

/// Teacher-forced loss of one sentence: every oracle step is a row,
/// graph rows are causally masked so step `j` sees `s_0..s_j` only.
pub fn step_loss(
    model: &Model,
    t: &mut Tape,
    input: &SentenceInput,
    oracle: &[OracleStep],
    steps: usize,
    edge_negatives: bool,
) -> Result<LossVars, NumericError> {
    let net = &model.net;
    let v = &model.vocabs;
    let n = input.len();
    let rows = oracle.len();
    assert!(oracle.last().is_some_and(|s| s.concept == EOG), "oracle ends with EOG");

    let h = net.text.forward(t, input)?;
    let source = net.graph.source_kv(t, h);
    let labels: Vec<String> = std::iter::once(BOG.to_string())
        .chain(oracle[..rows - 1].iter().map(|s| s.concept.clone()))
        .collect();
    let s = net.graph.forward_full(t, v, &labels, &source)?;

    let x0 = t.gather(h, &vec![0; rows]);
    let tokens = t.slice_rows(h, 1, n);
    let (text_keys, text_values) = net.solvers.concept.project_text(t, tokens);
    let (graph_keys, graph_values) = net.solvers.relation.project_graph(t, s);
    let inputs = SolverInputs {
        text_keys,
        text_values,
        graph_keys,
        graph_values,
    };
    let mask = causal_mask(rows);
    let r = net.solvers.iterate(t, x0, inputs, Some(&mask), steps, &mut Calls::default())?;
    let (pv, sw) = net.solvers.concept.distribution(t, r.mlp);

    // concept: p0 Pv[c] + p1 sum_{lemma = c} alpha + p2 sum_{token = c} alpha
    let mut at = Vec::with_capacity(rows);
    let mut known = Array2::zeros((rows, 1));
    let mut lemma_hits = Array2::zeros((rows, n));
    let mut token_hits = Array2::zeros((rows, n));
    for (j, step) in oracle.iter().enumerate() {
        match v.concept.get(&step.concept) {
            Some(id) if id != UNK_ID && id != BOG_ID => {
                at.push((j, id));
                known[[j, 0]] = 1.0;
            }
            _ => at.push((j, UNK_ID)),
        }
        for i in 0..n {
            if input.lemmas[i] == step.concept {
                lemma_hits[[j, i]] = 1.0;
            }
            if input.tokens[i] == step.concept {
                token_hits[[j, i]] = 1.0;
            }
        }
    }
    let pv_gold = t.gather_elems(pv, &at);
    let pv_gold = t.mul_const(pv_gold, known);
    let lemma_mass = t.mul_const(r.alpha, lemma_hits);
    let lemma_mass = t.sum_cols(lemma_mass);
    let token_mass = t.mul_const(r.alpha, token_hits);
    let token_mass = t.sum_cols(token_mass);
    let mut mixture = Vec::with_capacity(3);
    for (k, part) in [pv_gold, lemma_mass, token_mass].into_iter().enumerate() {
        let p = t.slice_cols(sw, k, 1);
        mixture.push(t.mul(p, part));
    }
    let p = t.add(mixture[0], mixture[1]);
    let p = t.add(p, mixture[2]);
    let concept = neg_log_sum(t, p);

    // edges: gold sources, or the dummy when there are none
    let mut gold = Vec::new();
    let mut others = Vec::new();
    for (j, step) in oracle.iter().enumerate() {
        if step.sources.is_empty() {
            gold.push((j, 0));
        }
        for (i, _) in &step.sources {
            gold.push((j, i + 1));
        }
        for c in 1..=j {
            if !step.sources.iter().any(|(i, _)| i + 1 == c) {
                others.push((j, c));
            }
        }
    }
    let b = t.gather_elems(r.beta, &gold);
    let mut edge = neg_log_sum(t, b);
    if edge_negatives && !others.is_empty() {
        let b = t.gather_elems(r.beta, &others);
        let nb = t.neg(b);
        let rest = t.add_scalar(nb, 1.0);
        let l = neg_log_sum(t, rest);
        edge = t.add(edge, l);
    }

    // labels of gold edges, scored from the final state
    let mut x_rows = Vec::new();
    let mut s_rows = Vec::new();
    let mut label_at = Vec::new();
    for (j, step) in oracle.iter().enumerate() {
        for (i, l) in &step.sources {
            label_at.push((x_rows.len(), v.labels.id(l)));
            x_rows.push(j);
            s_rows.push(i + 1);
        }
    }
    let label = if x_rows.is_empty() {
        zero(t)
    } else {
        let xs = t.gather(r.x, &x_rows);
        let ss = t.gather(s, &s_rows);
        let probs = net.solvers.labeler.probabilities(t, xs, ss);
        let lp = t.gather_elems(probs, &label_at);
        neg_log_sum(t, lp)
    };
    let total = t.add(concept, edge);
    let total = t.add(total, label);
    Ok(LossVars {
        concept,
        edge,
        label,
        total,
    })
}

/// Per-step `(concept, edge, label)` losses computed one expansion at a
/// time through the incremental decoder path, with gold concepts fed back.
pub fn isolated_step_losses(
    model: &Model,
    input: &SentenceInput,
    oracle: &[OracleStep],
    steps: usize,
) -> Result<Vec<(f64, f64, f64)>, NumericError> {
    let session = model.session(input)?;
    let mut mem = session.start()?;
    let mut out = Vec::with_capacity(oracle.len());
    for step in oracle {
        let e = session.expand(&mem, steps)?;
        let p = concept_probability(
            &step.concept,
            &e.pv,
            e.switch,
            &e.alpha,
            &model.vocabs.concept,
            &input.lemmas,
            &input.tokens,
        );
        let concept = -p.max(dualamr_numeric::LN_EPS).ln();
        let edge: f64 = if step.sources.is_empty() {
            -e.beta[0].max(dualamr_numeric::LN_EPS).ln()
        } else {
            step.sources.iter().map(|(i, _)| -e.beta[i + 1].max(dualamr_numeric::LN_EPS).ln()).sum()
        };
        let label: f64 = step
            .sources
            .iter()
            .map(|(i, l)| -e.label_probs[*i][model.vocabs.labels.id(l)].max(dualamr_numeric::LN_EPS).ln())
            .sum();
        out.push((concept, edge, label));
        if !step.is_eog() {
            mem = session.extend(&mem, &step.concept)?;
        }
    }
    Ok(out)
}

/// One processed training or dev sentence.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub input: SentenceInput,
    /// wiki- and sense-stripped gold graph
    pub graph: AmrGraph,
}

/// Optimizer moments and progress counters; enough to continue a run
/// exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: usize,
    pub adam: Adam,
    pub best: Option<f64>,
    pub best_step: usize,
    pub bad_evals: usize,
    pub stopped: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StateMeta {
    step: usize,
    adam_t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    best: Option<f64>,
    best_step: usize,
    bad_evals: usize,
    stopped: bool,
}

impl TrainState {
    pub fn new(model: &Model, run: &RunConfig) -> Self {
        TrainState {
            step: 0,
            adam: Adam::new(&model.store, run.train.beta1, run.train.beta2, run.train.adam_eps),
            best: None,
            best_step: 0,
            bad_evals: 0,
            stopped: false,
        }
    }

    pub fn to_checkpoint(&self, model: &Model) -> Checkpoint {
        let meta = StateMeta {
            step: self.step,
            adam_t: self.adam.t,
            beta1: self.adam.beta1,
            beta2: self.adam.beta2,
            eps: self.adam.eps,
            best: self.best,
            best_step: self.best_step,
            bad_evals: self.bad_evals,
            stopped: self.stopped,
        };
        let mut tensors = BTreeMap::new();
        for id in model.store.ids() {
            let name = model.store.name(id);
            tensors.insert(format!("m.{name}"), self.adam.m[id.0].clone());
            tensors.insert(format!("v.{name}"), self.adam.v[id.0].clone());
        }
        Checkpoint {
            metadata: serde_json::to_string_pretty(&meta).expect("state serializes"),
            tensors,
        }
    }

    pub fn from_checkpoint(model: &Model, ck: &Checkpoint) -> Result<Self, TrainError> {
        let meta: StateMeta = serde_json::from_str(&ck.metadata).map_err(|e| TrainError::State(e.to_string()))?;
        let mut adam = Adam::new(&model.store, meta.beta1, meta.beta2, meta.eps);
        adam.t = meta.adam_t;
        if ck.tensors.len() != 2 * model.store.len() {
            return Err(TrainError::State("moment tensors do not match the model".into()));
        }
        for id in model.store.ids() {
            let name = model.store.name(id);
            for (prefix, slot) in [("m", &mut adam.m), ("v", &mut adam.v)] {
                let t = ck
                    .tensors
                    .get(&format!("{prefix}.{name}"))
                    .ok_or_else(|| TrainError::State(format!("missing moment {prefix}.{name}")))?;
                if t.dim() != model.store.get(id).dim() {
                    return Err(TrainError::State(format!("moment {prefix}.{name} has the wrong shape")));
                }
                slot[id.0] = t.clone();
            }
        }
        Ok(TrainState {
            step: meta.step,
            adam,
            best: meta.best,
            best_step: meta.best_step,
            bad_evals: meta.bad_evals,
            stopped: meta.stopped,
        })
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub concept: f64,
    pub edge: f64,
    pub label: f64,
    pub grad_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_smatch: Option<f64>,
}

/// Example index at each of `count` consecutive batch positions starting
/// at `first`. Every epoch is a fresh permutation drawn from the seed.
pub fn batch_indices(seed: u64, corpus: usize, first: usize, count: usize) -> Vec<usize> {
    let mut cache: Option<(usize, Vec<usize>)> = None;
    (first..first + count)
        .map(|p| {
            let epoch = p / corpus;
            if cache.as_ref().is_none_or(|(e, _)| *e != epoch) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(epoch as u64);
                let mut perm: Vec<usize> = (0..corpus).collect();
                perm.shuffle(&mut rng);
                cache = Some((epoch, perm));
            }
            cache.as_ref().expect("filled above").1[p % corpus]
        })
        .collect()
}

/// One optimizer update on the next batch.
pub fn train_step(
    model: &mut Model,
    state: &mut TrainState,
    run: &RunConfig,
    data: &[Example],
) -> Result<LogRecord, TrainError> {
    if data.is_empty() {
        return Err(TrainError::Empty);
    }
    let tc = &run.train;
    let step = state.step + 1;
    let phase = if step <= tc.switch_step {
        Phase::Mixed
    } else {
        Phase::Deterministic
    };
    let batch = batch_indices(tc.seed, data.len(), (step - 1) * tc.batch_size, tc.batch_size);
    let mut grads: Vec<Option<Array2<f64>>> = vec![None; model.store.len()];
    let (mut loss, mut concept, mut edge, mut label) = (0.0, 0.0, 0.0, 0.0);
    for (b, &i) in batch.iter().enumerate() {
        let ex = &data[i];
        let seed = derive_seed(&[tc.seed, step as u64, b as u64]);
        let oracle = make_oracle(&ex.graph, phase, seed, &model.relations)?;
        let input = mask_features(&ex.input, tc.mask_rate, derive_seed(&[seed, 2]));
        let mut t = Tape::training(&model.store, tc.dropout, derive_seed(&[seed, 3]));
        let l = step_loss(model, &mut t, &input, &oracle, run.decode.steps, tc.edge_negatives)?;
        let total = t.scalar(l.total);
        if !total.is_finite() {
            return Err(TrainError::NonFinite {
                step,
                id: ex.id.clone(),
            });
        }
        loss += total;
        concept += t.scalar(l.concept);
        edge += t.scalar(l.edge);
        label += t.scalar(l.label);
        let g = t.backward(l.total)?.into_params(model.store.len());
        for (acc, g) in grads.iter_mut().zip(g) {
            match (acc.as_mut(), g) {
                (Some(a), Some(g)) => *a += &g,
                (None, Some(g)) => *acc = Some(g),
                _ => {}
            }
        }
    }
    let scale = 1.0 / batch.len() as f64;
    for g in grads.iter_mut().flatten() {
        *g *= scale;
    }
    let grad_norm = clip_global_norm(&mut grads, tc.clip_norm);
    let lr = tc.lr_scale * lr_schedule(step, tc.warmup, model.config.d);
    state.adam.step(&mut model.store, &grads, lr);
    state.step = step;
    Ok(LogRecord {
        step,
        lr,
        loss: loss * scale,
        concept: concept * scale,
        edge: edge * scale,
        label: label * scale,
        grad_norm,
        dev_smatch: None,
    })
}

/// Placeholder for a parse that produced no node.
pub fn empty_graph() -> AmrGraph {
    AmrGraph::single("amr-empty")
}

/// Corpus Smatch F1 of greedy parses against the sense-stripped gold.
pub fn evaluate(model: &Model, run: &RunConfig, data: &[Example]) -> Result<f64, TrainError> {
    let opts = DecodeOptions {
        steps: run.decode.steps,
        beam: 1,
        diagnostics: false,
    };
    let mut pred = Vec::with_capacity(data.len());
    for ex in data {
        let session = model.session(&ex.input)?;
        pred.push(parse_greedy(&session, &opts)?.graph.unwrap_or_else(empty_graph));
    }
    let gold: Vec<AmrGraph> = data.iter().map(|e| e.graph.clone()).collect();
    let config = SmatchConfig {
        restarts: run.decode.smatch_restarts,
        seed: 0,
    };
    Ok(corpus_smatch(&pred, &gold, &config).expect("aligned corpora").f1())
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub last: Checkpoint,
    /// the best model of this run; `None` when a resumed run never beat
    /// the best score recorded before it
    pub best: Option<Checkpoint>,
    pub state: TrainState,
    pub log: Vec<LogRecord>,
}

/// Trains until `max_steps` or until dev Smatch has not improved for
/// `patience` evaluations. Without dev data the last model is also the
/// best one. `on_record` sees every log line as it is produced.
pub fn train(
    model: &mut Model,
    state: &mut TrainState,
    run: &RunConfig,
    data: &[Example],
    dev: &[Example],
    mut on_record: impl FnMut(&LogRecord),
) -> Result<TrainOutcome, TrainError> {
    let tc = &run.train;
    let mut log = Vec::new();
    let mut best = None;
    while state.step < tc.max_steps && !state.stopped {
        let mut rec = train_step(model, state, run, data)?;
        if !dev.is_empty() && (state.step % tc.eval_interval == 0 || state.step == tc.max_steps) {
            let score = evaluate(model, run, dev)?;
            rec.dev_smatch = Some(score);
            if state.best.is_none_or(|b| score > b) {
                state.best = Some(score);
                state.best_step = state.step;
                state.bad_evals = 0;
                best = Some(model.to_checkpoint(run, state.step, Some(score)));
            } else {
                state.bad_evals += 1;
                if state.bad_evals >= tc.patience {
                    log::info!("early stop at step {}: no dev gain for {} evaluations", state.step, tc.patience);
                    state.stopped = true;
                }
            }
        }
        on_record(&rec);
        log.push(rec);
    }
    let last = model.to_checkpoint(run, state.step, state.best);
    if dev.is_empty() {
        best = Some(last.clone());
    }
    Ok(TrainOutcome {
        last,
        best,
        state: state.clone(),
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ModelConfig, Profile};
    use crate::toy::toy_setup;

    fn tiny_run() -> RunConfig {
        let mut run = RunConfig::for_profile(Profile::Desk);
        run.model = ModelConfig::tiny(8);
        run.train.batch_size = 3;
        run.train.warmup = 10;
        run.train.max_steps = 6;
        run.train.switch_step = 3;
        run.train.eval_interval = 2;
        run.decode.steps = 2;
        run
    }

    #[test]
    fn schedule_shape() {
        let d = 512;
        let peak = lr_schedule(2000, 2000, d);
        assert!((lr_schedule(1, 2000, d) - (d as f64).powf(-0.5) * 2000f64.powf(-1.5)).abs() < 1e-15);
        assert!(lr_schedule(1999, 2000, d) < peak && lr_schedule(2001, 2000, d) < peak);
        let mut prev = peak;
        for s in (2100..20_000).step_by(500) {
            let lr = lr_schedule(s, 2000, d);
            assert!(lr < prev);
            prev = lr;
        }
    }

    #[test]
    fn coin_is_fair() {
        let heads = (0..10_000u64).filter(|&i| random_order_coin(derive_seed(&[7, i]))).count();
        assert!((4800..=5200).contains(&heads), "{heads}");
    }

    #[test]
    fn deterministic_phase_ignores_seed() {
        let (model, data) = toy_setup(&tiny_run(), 10, 0);
        for ex in &data {
            let a = make_oracle(&ex.graph, Phase::Deterministic, 1, &model.relations).unwrap();
            let b = make_oracle(&ex.graph, Phase::Deterministic, 99, &model.relations).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn masking_rates() {
        let (_, data) = toy_setup(&tiny_run(), 40, 0);
        let input = &data[0].input;
        let same = mask_features(input, 0.0, 5);
        assert_eq!(same.lemma_ids, input.lemma_ids);
        let (mut masked, mut total) = (0usize, 0usize);
        for (k, ex) in data.iter().enumerate() {
            let m = mask_features(&ex.input, 0.33, k as u64);
            assert_eq!(m.lemma_ids[0], ex.input.lemma_ids[0]);
            assert_eq!(m.tokens, ex.input.tokens);
            assert_eq!(m.chars, ex.input.chars);
            for col in [&m.lemma_ids, &m.pos_ids, &m.ner_ids] {
                masked += col[1..].iter().filter(|&&x| x == UNK_ID).count();
                total += col.len() - 1;
            }
        }
        let rate = masked as f64 / total as f64;
        assert!((0.27..0.39).contains(&rate), "{rate}");
        let all = mask_features(input, 0.999_999, 1);
        assert!(all.pos_ids[1..].iter().all(|&x| x == UNK_ID));
    }

    #[test]
    fn epochs_are_permutations() {
        let idx = batch_indices(3, 7, 0, 21);
        for epoch in idx.chunks(7) {
            let mut e = epoch.to_vec();
            e.sort_unstable();
            assert_eq!(e, (0..7).collect::<Vec<_>>());
        }
        assert_eq!(batch_indices(3, 7, 5, 9), idx[5..14].to_vec());
    }

    #[test]
    fn loss_is_sum_of_isolated_steps() {
        let run = tiny_run();
        let (model, data) = toy_setup(&run, 6, 1);
        for ex in &data {
            let oracle = make_oracle(&ex.graph, Phase::Deterministic, 0, &model.relations).unwrap();
            let mut t = Tape::new(&model.store);
            let l = step_loss(&model, &mut t, &ex.input, &oracle, 2, false).unwrap();
            let parts = isolated_step_losses(&model, &ex.input, &oracle, 2).unwrap();
            let sum = |f: fn(&(f64, f64, f64)) -> f64| parts.iter().map(f).sum::<f64>();
            assert!((t.scalar(l.concept) - sum(|p| p.0)).abs() < 1e-8);
            assert!((t.scalar(l.edge) - sum(|p| p.1)).abs() < 1e-8);
            assert!((t.scalar(l.label) - sum(|p| p.2)).abs() < 1e-8);
            let total = t.scalar(l.total);
            assert!((total - sum(|p| p.0 + p.1 + p.2)).abs() < 1e-8, "{}", ex.id);
        }
    }

    #[test]
    fn resumed_run_matches_uninterrupted_run() {
        let run = tiny_run();
        let (mut a, data) = toy_setup(&run, 8, 2);
        let mut sa = TrainState::new(&a, &run);
        let full = train(&mut a, &mut sa, &run, &data, &data[..2], |_| {}).unwrap();

        let (mut b, _) = toy_setup(&run, 8, 2);
        let mut half = run.clone();
        half.train.max_steps = 3;
        let mut sb = TrainState::new(&b, &half);
        let first = train(&mut b, &mut sb, &half, &data, &data[..2], |_| {}).unwrap();
        let state_bytes = sb.to_checkpoint(&b).to_bytes();
        let (mut b, _) = Model::from_checkpoint(&first.last).unwrap();
        let mut sb = TrainState::from_checkpoint(&b, &Checkpoint::from_bytes(&state_bytes).unwrap()).unwrap();
        let second = train(&mut b, &mut sb, &run, &data, &data[..2], |_| {}).unwrap();

        let losses = |log: &[LogRecord]| log.iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>();
        let mut joined = losses(&first.log);
        joined.extend(losses(&second.log));
        assert_eq!(joined, losses(&full.log));
        assert_eq!(b.store, a.store);
        assert_eq!(second.last.to_bytes(), full.last.to_bytes());
    }

    #[test]
    fn best_checkpoint_carries_best_dev_score() {
        let run = tiny_run();
        let (mut m, data) = toy_setup(&run, 8, 3);
        let mut s = TrainState::new(&m, &run);
        let out = train(&mut m, &mut s, &run, &data, &data[..3], |_| {}).unwrap();
        let scores: Vec<f64> = out.log.iter().filter_map(|r| r.dev_smatch).collect();
        assert_eq!(scores.len(), 3);
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (_, meta) = Model::from_checkpoint(out.best.as_ref().unwrap()).unwrap();
        assert_eq!(meta.dev_smatch, Some(max));
        assert_eq!(s.best, Some(max));
    }

    #[test]
    fn exhausted_patience_stops_training() {
        let mut run = tiny_run();
        run.train.patience = 1;
        run.train.max_steps = 40;
        run.train.switch_step = 20;
        run.train.eval_interval = 1;
        let (mut m, data) = toy_setup(&run, 4, 4);
        let mut s = TrainState::new(&m, &run);
        let out = train(&mut m, &mut s, &run, &data, &data[..1], |_| {}).unwrap();
        assert!(s.stopped);
        assert!(out.log.len() < 40);
    }
}
