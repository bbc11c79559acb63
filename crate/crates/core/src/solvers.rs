//! Concept solver, relation solver, the two state updates that chain them,
//! and the biaffine edge labeler.

use std::collections::BTreeMap;

use dualamr_numeric::{check_mask, Array2, FeedForward, LayerNorm, Linear, Mask, NumericError, ParamId, ParamStore, Tape, Var};
use rand::Rng;

use crate::config::ModelConfig;
use crate::vocab::{Vocab, BOG_ID, UNK_ID};

/// Single-head attention over `h_1..h_n` plus the vocabulary/copy switch.
#[derive(Debug, Clone)]
pub struct ConceptSolver {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub vocab: Linear,
    pub switch: Linear,
    pub d: usize,
}

impl ConceptSolver {
    fn new(store: &mut ParamStore, c: &ModelConfig, concepts: usize, rng: &mut impl Rng) -> Self {
        ConceptSolver {
            q: Linear::new(store, "concept.q", c.d, c.d, false, rng),
            k: Linear::new(store, "concept.k", c.d, c.d, false, rng),
            v: Linear::new(store, "concept.v", c.d, c.d, false, rng),
            vocab: Linear::new(store, "concept.vocab", c.d, concepts, true, rng),
            switch: Linear::new(store, "concept.switch", c.d, 3, false, rng),
            d: c.d,
        }
    }

    /// Keys and values of the token states `h_1..h_n`.
    pub fn project_text(&self, t: &mut Tape, tokens: Var) -> (Var, Var) {
        (self.k.forward(t, tokens), self.v.forward(t, tokens))
    }

    /// `alpha`, one row per query.
    pub fn attention(&self, t: &mut Tape, y: Var, keys: Var) -> Var {
        let q = self.q.forward(t, y);
        let kt = t.transpose(keys);
        let s = t.matmul(q, kt);
        let s = t.scale(s, 1.0 / (self.d as f64).sqrt());
        t.softmax(s)
    }

    /// `(W^V h) alpha + y`.
    pub fn readout(&self, t: &mut Tape, alpha: Var, values: Var, y: Var) -> Var {
        let r = t.matmul(alpha, values);
        t.add(r, y)
    }

    /// Vocabulary distribution (UNK and BOG excluded) and `(p0, p1, p2)`.
    pub fn distribution(&self, t: &mut Tape, mlp: Var) -> (Var, Var) {
        let logits = self.vocab.forward(t, mlp);
        let mask = vocab_mask(t.value(logits).dim());
        let pv = t.masked_softmax(logits, &mask);
        let sw = self.switch.forward(t, mlp);
        (pv, t.softmax(sw))
    }
}

/// Concepts the vocabulary channel may produce: everything but UNK and BOG.
pub fn vocab_mask(dim: (usize, usize)) -> Mask {
    Array2::from_shape_fn(dim, |(_, j)| j != UNK_ID && j != BOG_ID)
}

/// Per-head attention over `s_0..s_m`; value projections are one `d x d`
/// matrix per head, stored side by side.
#[derive(Debug, Clone)]
pub struct RelationSolver {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub heads: usize,
    pub d: usize,
}

impl RelationSolver {
    fn new(store: &mut ParamStore, c: &ModelConfig, rng: &mut impl Rng) -> Self {
        RelationSolver {
            q: Linear::new(store, "relation.q", c.d, c.d, false, rng),
            k: Linear::new(store, "relation.k", c.d, c.d, false, rng),
            v: Linear::new(store, "relation.v", c.d, c.rel_heads * c.d, false, rng),
            heads: c.rel_heads,
            d: c.d,
        }
    }

    pub fn project_graph(&self, t: &mut Tape, s: Var) -> (Var, Var) {
        (self.k.forward(t, s), self.v.forward(t, s))
    }

    /// `beta^h` for every head.
    pub fn attention(&self, t: &mut Tape, x: Var, keys: Var, mask: Option<&Mask>) -> Vec<Var> {
        let q = self.q.forward(t, x);
        let dk = self.d / self.heads;
        (0..self.heads)
            .map(|h| {
                let qh = t.slice_cols(q, h * dk, dk);
                let kh = t.slice_cols(keys, h * dk, dk);
                let kt = t.transpose(kh);
                let s = t.matmul(qh, kt);
                let s = t.scale(s, 1.0 / (dk as f64).sqrt());
                match mask {
                    Some(m) => t.masked_softmax(s, m),
                    None => t.softmax(s),
                }
            })
            .collect()
    }

    /// `sum_h beta^h (W^V_h s)`.
    pub fn readout(&self, t: &mut Tape, betas: &[Var], values: Var) -> Var {
        let parts: Vec<Var> = betas
            .iter()
            .enumerate()
            .map(|(h, &b)| {
                let vh = t.slice_cols(values, h * self.d, self.d);
                t.matmul(b, vh)
            })
            .collect();
        parts[1..].iter().fold(parts[0], |acc, &p| t.add(acc, p))
    }
}

/// Feed-forward state update, optionally wrapped as `LN(in + FFN(in))`.
#[derive(Debug, Clone)]
pub struct StateUpdate {
    pub ffn: FeedForward,
    pub norm: Option<LayerNorm>,
}

impl StateUpdate {
    fn new(store: &mut ParamStore, name: &str, c: &ModelConfig, hidden: usize, rng: &mut impl Rng) -> Self {
        StateUpdate {
            ffn: FeedForward::new(store, &format!("{name}.ffn"), c.d, hidden, c.d, rng),
            norm: c.state_residual.then(|| LayerNorm::new(store, &format!("{name}.ln"), c.d)),
        }
    }

    pub fn forward(&self, t: &mut Tape, input: Var) -> Var {
        let f = self.ffn.forward(t, input);
        match &self.norm {
            Some(ln) => {
                let sum = t.add(input, f);
                ln.forward(t, sum)
            }
            None => f,
        }
    }
}

/// `f(x)^T U_l f'(s) + u_l^T [f(x); f'(s)] + b_l` for every label `l`.
#[derive(Debug, Clone)]
pub struct Biaffine {
    pub head: Linear,
    pub dep: Linear,
    pub u: ParamId,
    pub linear: Linear,
    pub width: usize,
}

impl Biaffine {
    fn new(store: &mut ParamStore, c: &ModelConfig, labels: usize, rng: &mut impl Rng) -> Self {
        let p = c.biaffine;
        Biaffine {
            head: Linear::new(store, "labeler.head", c.d, p, true, rng),
            dep: Linear::new(store, "labeler.dep", c.d, p, true, rng),
            u: store.add("labeler.u", dualamr_numeric::xavier(p, labels * p, rng)),
            linear: Linear::new(store, "labeler.linear", 2 * p, labels, true, rng),
            width: p,
        }
    }

    /// Label logits for row pairs `(x_k, s_k)`.
    pub fn scores(&self, t: &mut Tape, x: Var, s: Var) -> Var {
        let f = self.head.forward(t, x);
        let f = t.relu(f);
        let f = t.dropout(f);
        let g = self.dep.forward(t, s);
        let g = t.relu(g);
        let g = t.dropout(g);
        let u = t.param(self.u);
        let fu = t.matmul(f, u);
        let bi = t.row_block_dot(fu, g);
        let fg = t.concat_cols(&[f, g]);
        let lin = self.linear.forward(t, fg);
        t.add(bi, lin)
    }

    pub fn probabilities(&self, t: &mut Tape, x: Var, s: Var) -> Var {
        let sc = self.scores(t, x, s);
        t.softmax(sc)
    }
}

#[derive(Debug, Clone)]
pub struct Solvers {
    pub concept: ConceptSolver,
    pub relation: RelationSolver,
    /// graph readout to the state handed to the concept solver
    pub to_concept: StateUpdate,
    /// concept readout to the state handed to the relation solver
    pub to_relation: StateUpdate,
    pub labeler: Biaffine,
}

/// Values of one reasoning round, kept for diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct RoundVars {
    pub x_in: Var,
    pub beta_max: Var,
    pub y: Var,
    pub alpha: Var,
}

/// Output of `N` rounds: final concept-side readout, relation scores and
/// state, plus per-round trace.
#[derive(Debug, Clone)]
pub struct Rounds {
    pub alpha: Var,
    pub mlp: Var,
    pub beta_heads: Vec<Var>,
    pub beta: Var,
    pub x: Var,
    pub trace: Vec<RoundVars>,
}

/// Keys and values both solvers read during one expansion.
#[derive(Debug, Clone, Copy)]
pub struct SolverInputs {
    pub text_keys: Var,
    pub text_values: Var,
    pub graph_keys: Var,
    pub graph_values: Var,
}

/// Running totals of solver calls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Calls {
    pub concept: usize,
    pub relation: usize,
}

impl Solvers {
    pub fn new(store: &mut ParamStore, c: &ModelConfig, concepts: usize, labels: usize, rng: &mut impl Rng) -> Self {
        Solvers {
            concept: ConceptSolver::new(store, c, concepts, rng),
            relation: RelationSolver::new(store, c, rng),
            to_concept: StateUpdate::new(store, "update_y", c, c.relation_ffn, rng),
            to_relation: StateUpdate::new(store, "update_x", c, c.concept_ffn, rng),
            labeler: Biaffine::new(store, c, labels, rng),
        }
    }

    /// Runs `steps` rounds starting from `x0`. Each round: relation
    /// attention from `x`, graph readout into `y`, concept attention from
    /// `y`, sentence readout into the next `x`. `mask` limits which graph
    /// rows each query row may point at.
    pub fn iterate(
        &self,
        t: &mut Tape,
        x0: Var,
        inputs: SolverInputs,
        mask: Option<&Mask>,
        steps: usize,
        calls: &mut Calls,
    ) -> Result<Rounds, NumericError> {
        assert!(steps >= 1, "at least one round of inference");
        if let Some(m) = mask {
            check_mask(m)?;
        }
        let mut x = x0;
        let mut trace = Vec::with_capacity(steps);
        let mut last = None;
        for _ in 0..steps {
            let betas = self.relation.attention(t, x, inputs.graph_keys, mask);
            calls.relation += 1;
            let beta = t.max(&betas);
            let read = self.relation.readout(t, &betas, inputs.graph_values);
            let y_in = t.add(x, read);
            let y = self.to_concept.forward(t, y_in);
            let alpha = self.concept.attention(t, y, inputs.text_keys);
            calls.concept += 1;
            let mlp = self.concept.readout(t, alpha, inputs.text_values, y);
            trace.push(RoundVars {
                x_in: x,
                beta_max: beta,
                y,
                alpha,
            });
            x = self.to_relation.forward(t, mlp);
            last = Some((alpha, mlp, betas, beta));
        }
        let (alpha, mlp, beta_heads, beta) = last.expect("steps >= 1");
        Ok(Rounds {
            alpha,
            mlp,
            beta_heads,
            beta,
            x,
            trace,
        })
    }
}

/// Source nodes read off per-head pointer distributions over `s_0..s_m`:
/// each head's argmax, the dummy dropped, duplicates merged. A non-root
/// node with no source falls back to the best non-dummy node under `beta`.
pub fn extract_edges(heads: &[Vec<f64>], beta: &[f64], is_root: bool) -> Vec<usize> {
    let mut picks: Vec<usize> = heads.iter().map(|h| argmax(h)).filter(|&i| i != 0).collect();
    picks.sort_unstable();
    picks.dedup();
    if picks.is_empty() && !is_root && beta.len() > 1 {
        picks.push(1 + argmax(&beta[1..]));
    }
    picks
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Combined concept probabilities over the deduplicated candidate set,
/// sorted by descending probability and then by label.
pub fn concept_candidates(
    pv: &[f64],
    switch: [f64; 3],
    alpha: &[f64],
    vocab: &Vocab,
    lemmas: &[String],
    tokens: &[String],
) -> Vec<(String, f64)> {
    let mut mass: BTreeMap<&str, f64> = BTreeMap::new();
    for (i, &p) in pv.iter().enumerate() {
        if i != UNK_ID && i != BOG_ID {
            *mass.entry(vocab.item(i)).or_insert(0.0) += switch[0] * p;
        }
    }
    for (i, &a) in alpha.iter().enumerate() {
        *mass.entry(lemmas[i].as_str()).or_insert(0.0) += switch[1] * a;
        *mass.entry(tokens[i].as_str()).or_insert(0.0) += switch[2] * a;
    }
    let mut out: Vec<(String, f64)> = mass.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Probability of one label under the same mixture.
pub fn concept_probability(
    label: &str,
    pv: &[f64],
    switch: [f64; 3],
    alpha: &[f64],
    vocab: &Vocab,
    lemmas: &[String],
    tokens: &[String],
) -> f64 {
    let mut p = match vocab.get(label) {
        Some(i) if i != UNK_ID && i != BOG_ID => switch[0] * pv[i],
        _ => 0.0,
    };
    for (i, &a) in alpha.iter().enumerate() {
        if lemmas[i] == label {
            p += switch[1] * a;
        }
        if tokens[i] == label {
            p += switch[2] * a;
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use dualamr_numeric::ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn edge_extraction_rules() {
        let onehot = |i: usize, n: usize| (0..n).map(|j| if j == i { 0.9 } else { 0.1 / (n - 1) as f64 }).collect::<Vec<_>>();
        let heads: Vec<Vec<f64>> = [1, 1, 0, 3].iter().map(|&i| onehot(i, 4)).collect();
        assert_eq!(extract_edges(&heads, &[0.9, 0.9, 0.1, 0.9], false), vec![1, 3]);
        let dummy: Vec<Vec<f64>> = vec![onehot(0, 1); 4];
        assert!(extract_edges(&dummy, &[1.0], true).is_empty());
        let dummy: Vec<Vec<f64>> = vec![onehot(0, 3); 2];
        assert_eq!(extract_edges(&dummy, &[0.9, 0.02, 0.08], false), vec![2]);
        assert!(extract_edges(&dummy, &[0.9, 0.02, 0.08], true).is_empty());
    }

    #[test]
    fn shifting_one_head_keeps_edges() {
        let heads = vec![vec![0.2, 0.5, 0.3], vec![0.6, 0.1, 0.3]];
        let shifted: Vec<Vec<f64>> = heads
            .iter()
            .enumerate()
            .map(|(h, row)| {
                let logits: Vec<f64> = row.iter().map(|p: &f64| p.ln() + if h == 0 { 3.0 } else { 0.0 }).collect();
                let z: f64 = logits.iter().map(|l| l.exp()).sum();
                logits.iter().map(|l| l.exp() / z).collect()
            })
            .collect();
        let beta = |hs: &Vec<Vec<f64>>| (0..3).map(|i| hs.iter().map(|h| h[i]).fold(0.0, f64::max)).collect::<Vec<_>>();
        assert_eq!(
            extract_edges(&heads, &beta(&heads), false),
            extract_edges(&shifted, &beta(&shifted), false)
        );
    }

    #[test]
    fn candidates_merge_channels() {
        let vocab = Vocab::from_items(strings(&["<unk>", "<bog>", "<eog>", "boy", "go"]));
        let pv = [0.0, 0.0, 0.1, 0.6, 0.3];
        let alpha = [0.25, 0.75];
        let lemmas = strings(&["boy", "boy"]);
        let tokens = strings(&["Boy", "boys"]);
        let c = concept_candidates(&pv, [0.5, 0.3, 0.2], &alpha, &vocab, &lemmas, &tokens);
        let get = |l: &str| c.iter().find(|x| x.0 == l).unwrap().1;
        assert!((get("boy") - (0.5 * 0.6 + 0.3)).abs() < 1e-15);
        assert!((get("boys") - 0.15).abs() < 1e-15);
        assert!((c.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(c[0].0, "boy");
        let p = concept_probability("boy", &pv, [0.5, 0.3, 0.2], &alpha, &vocab, &lemmas, &tokens);
        assert_eq!(p, get("boy"));
        assert_eq!(concept_probability("zzz", &pv, [0.5, 0.3, 0.2], &alpha, &vocab, &lemmas, &tokens), 0.0);
        assert_eq!(concept_probability("<unk>", &pv, [0.5, 0.3, 0.2], &alpha, &vocab, &lemmas, &tokens), 0.0);
    }

    #[test]
    fn pure_vocab_switch_reproduces_vocab_distribution() {
        let vocab = Vocab::from_items(strings(&["<unk>", "<bog>", "<eog>", "boy"]));
        let pv = [0.0, 0.0, 0.25, 0.75];
        let c = concept_candidates(&pv, [1.0, 0.0, 0.0], &[1.0], &vocab, &strings(&["x"]), &strings(&["y"]));
        assert_eq!(c[0], ("boy".to_string(), 0.75));
        assert_eq!(c[1], ("<eog>".to_string(), 0.25));
    }

    #[test]
    fn dummy_only_graph_points_at_dummy() {
        let c = ModelConfig::tiny(8);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let solvers = Solvers::new(&mut store, &c, 5, 3, &mut rng);
        let mut t = Tape::new(&store);
        let x = t.constant(Array2::from_elem((1, 8), 0.3));
        let s = t.constant(Array2::from_elem((1, 8), -0.2));
        let (k, _) = solvers.relation.project_graph(&mut t, s);
        for b in solvers.relation.attention(&mut t, x, k, None) {
            assert_eq!(t.value(b), &array![[1.0]]);
        }
    }

    #[test]
    fn zero_labeler_is_uniform() {
        let c = ModelConfig::tiny(8);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let solvers = Solvers::new(&mut store, &c, 5, 4, &mut rng);
        for id in store.ids().collect::<Vec<_>>() {
            if store.name(id).starts_with("labeler") {
                store.get_mut(id).fill(0.0);
            }
        }
        let mut t = Tape::new(&store);
        let x = t.constant(Array2::from_elem((2, 8), 0.7));
        let p = solvers.labeler.probabilities(&mut t, x, x);
        assert!(t.value(p).iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }
}
