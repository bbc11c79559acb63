//! The sentence encoder (run once per sentence) and the causal node-sequence
//! encoder (full form for training, one-row-at-a-time form for decoding).

use std::sync::Arc;

use dualamr_numeric::ndarray::{concatenate, s, Axis};
use dualamr_numeric::{
    check_mask, Array2, CharCnn, FeedForward, LayerNorm, Linear, Mask, MultiHeadAttention, NumericError, ParamId,
    ParamStore, Tape, Var,
};
use rand::Rng;

use crate::config::ModelConfig;
use crate::vocab::{Vocabularies, BOG, BOS, BOS_ID};

/// Token features resolved to vocabulary ids. Index 0 is the BOS position.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceInput {
    pub tokens: Vec<String>,
    pub lemmas: Vec<String>,
    pub lemma_ids: Vec<usize>,
    pub pos_ids: Vec<usize>,
    pub ner_ids: Vec<usize>,
    pub chars: Vec<Vec<usize>>,
    /// `(n + 1) x width`; row 0 is zero
    pub context: Option<Array2<f64>>,
}

impl SentenceInput {
    pub fn new(vocabs: &Vocabularies, tokens: &[String], lemmas: &[String], pos: &[String], ner: &[String]) -> Self {
        assert!(!tokens.is_empty(), "a sentence needs at least one token");
        let ids = |v: &crate::vocab::Vocab, col: &[String]| -> Vec<usize> {
            std::iter::once(BOS_ID).chain(col.iter().map(|s| v.id(s))).collect()
        };
        SentenceInput {
            tokens: tokens.to_vec(),
            lemmas: lemmas.to_vec(),
            lemma_ids: ids(&vocabs.lemma, lemmas),
            pos_ids: ids(&vocabs.pos, pos),
            ner_ids: ids(&vocabs.ner, ner),
            chars: std::iter::once(vocabs.char_ids(BOS))
                .chain(tokens.iter().map(|t| vocabs.char_ids(t)))
                .collect(),
            context: None,
        }
    }

    /// Attaches per-token contextual vectors (`n x width`).
    pub fn with_context(mut self, vectors: &Array2<f64>) -> Result<Self, String> {
        if vectors.nrows() != self.len() {
            return Err(format!(
                "contextual vectors cover {} tokens, sentence has {}",
                vectors.nrows(),
                self.len()
            ));
        }
        let mut ctx = Array2::zeros((self.len() + 1, vectors.ncols()));
        ctx.slice_mut(s![1.., ..]).assign(vectors);
        self.context = Some(ctx);
        Ok(self)
    }

    /// Token count, BOS excluded.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Fixed sinusoidal position codes for positions `start..start + len`.
pub fn positions(start: usize, len: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, d), |(p, i)| {
        let pos = (start + p) as f64;
        let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        if i % 2 == 0 {
            (pos / rate).sin()
        } else {
            (pos / rate).cos()
        }
    })
}

/// Lower-triangular mask: row `i` may see columns `0..=i`.
pub fn causal_mask(n: usize) -> Mask {
    Array2::from_shape_fn((n, n), |(i, j)| j <= i)
}

fn residual(t: &mut Tape, ln: &LayerNorm, x: Var, sub: Var) -> Var {
    let sub = t.dropout(sub);
    let sum = t.add(x, sub);
    ln.forward(t, sum)
}

/// Post-norm self-attention block.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub ln_attn: LayerNorm,
    pub ffn: FeedForward,
    pub ln_ffn: LayerNorm,
}

impl EncoderLayer {
    fn new(store: &mut ParamStore, name: &str, c: &ModelConfig, rng: &mut impl Rng) -> Self {
        EncoderLayer {
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), c.d, c.heads, rng),
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), c.d),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), c.d, c.ffn, c.d, rng),
            ln_ffn: LayerNorm::new(store, &format!("{name}.ln_ffn"), c.d),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Result<Var, NumericError> {
        let a = self.attn.forward(t, x, x, None)?.context;
        let x = residual(t, &self.ln_attn, x, a);
        let f = self.ffn.forward(t, x);
        Ok(residual(t, &self.ln_ffn, x, f))
    }
}

/// Causal self-attention, attention over the sentence, feed-forward.
#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub ln_self: LayerNorm,
    pub src_attn: MultiHeadAttention,
    pub ln_src: LayerNorm,
    pub ffn: FeedForward,
    pub ln_ffn: LayerNorm,
}

impl DecoderLayer {
    fn new(store: &mut ParamStore, name: &str, c: &ModelConfig, rng: &mut impl Rng) -> Self {
        DecoderLayer {
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), c.d, c.heads, rng),
            ln_self: LayerNorm::new(store, &format!("{name}.ln_self"), c.d),
            src_attn: MultiHeadAttention::new(store, &format!("{name}.src_attn"), c.d, c.heads, rng),
            ln_src: LayerNorm::new(store, &format!("{name}.ln_src"), c.d),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), c.d, c.ffn, c.d, rng),
            ln_ffn: LayerNorm::new(store, &format!("{name}.ln_ffn"), c.d),
        }
    }

    /// `k`/`v` are the self-attention keys and values of every row visible
    /// to the queries in `x`; `mask` restricts them further.
    fn forward(
        &self,
        t: &mut Tape,
        x: Var,
        (k, v): (Var, Var),
        mask: Option<&Mask>,
        (sk, sv): (Var, Var),
    ) -> Result<Var, NumericError> {
        let a = self.self_attn.attend(t, x, k, v, mask)?.context;
        let x = residual(t, &self.ln_self, x, a);
        let a = self.src_attn.attend(t, x, sk, sv, None)?.context;
        let x = residual(t, &self.ln_src, x, a);
        let f = self.ffn.forward(t, x);
        Ok(residual(t, &self.ln_ffn, x, f))
    }
}

#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub chars: CharCnn,
    pub lemma: ParamId,
    pub pos: ParamId,
    pub ner: ParamId,
    pub proj: Linear,
    pub layers: Vec<EncoderLayer>,
    pub d: usize,
    pub context_width: usize,
}

impl TextEncoder {
    pub fn new(store: &mut ParamStore, c: &ModelConfig, v: &Vocabularies, rng: &mut impl Rng) -> Self {
        use dualamr_numeric::embedding;
        let width = c.char_out + c.lemma_dim + c.pos_dim + c.ner_dim + c.context_width;
        TextEncoder {
            chars: CharCnn::new(store, "text.chars", v.chars.len(), c.char_dim, c.char_filters, c.char_out, rng),
            lemma: store.add("text.lemma", embedding(v.lemma.len(), c.lemma_dim, rng)),
            pos: store.add("text.pos", embedding(v.pos.len(), c.pos_dim, rng)),
            ner: store.add("text.ner", embedding(v.ner.len(), c.ner_dim, rng)),
            proj: Linear::new(store, "text.proj", width, c.d, true, rng),
            layers: (0..c.text_layers)
                .map(|i| EncoderLayer::new(store, &format!("text.layer{i}"), c, rng))
                .collect(),
            d: c.d,
            context_width: c.context_width,
        }
    }

    /// Concatenated token features before projection, `(n + 1) x width`.
    pub fn features(&self, t: &mut Tape, s: &SentenceInput) -> Var {
        let mut parts = vec![self.chars.forward(t, &s.chars)];
        for (table, ids) in [(self.lemma, &s.lemma_ids), (self.pos, &s.pos_ids), (self.ner, &s.ner_ids)] {
            let table = t.param(table);
            parts.push(t.gather(table, ids));
        }
        if self.context_width > 0 {
            let ctx = s.context.as_ref().expect("model expects contextual vectors");
            assert_eq!(ctx.ncols(), self.context_width, "shape mismatch: contextual width");
            parts.push(t.constant(ctx.clone()));
        }
        t.concat_cols(&parts)
    }

    /// Projected token embeddings, without positions.
    pub fn embed(&self, t: &mut Tape, s: &SentenceInput) -> Var {
        let f = self.features(t, s);
        self.proj.forward(t, f)
    }

    /// `h_0 .. h_n`.
    pub fn forward(&self, t: &mut Tape, s: &SentenceInput) -> Result<Var, NumericError> {
        let e = self.embed(t, s);
        let p = t.constant(positions(0, s.len() + 1, self.d));
        let x = t.add(e, p);
        let mut x = t.dropout(x);
        for layer in &self.layers {
            x = layer.forward(t, x)?;
        }
        Ok(x)
    }
}

#[derive(Debug, Clone)]
pub struct GraphEncoder {
    pub chars: CharCnn,
    pub concept: ParamId,
    pub proj: Linear,
    pub layers: Vec<DecoderLayer>,
    pub d: usize,
    pub source_attends_bos: bool,
}

/// Per-layer self-attention keys and values of the nodes built so far, and
/// the node vectors `s_0 .. s_m`. Extending never touches existing rows.
#[derive(Debug, Clone)]
pub struct GraphMemory {
    pub labels: Vec<String>,
    pub cache: Vec<(Arc<Array2<f64>>, Arc<Array2<f64>>)>,
    pub s: Arc<Array2<f64>>,
}

impl GraphMemory {
    /// Number of vectors, the BOG dummy included.
    pub fn len(&self) -> usize {
        self.s.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.s.nrows() == 0
    }
}

/// Sentence states and the per-layer source-attention keys and values
/// derived from them.
#[derive(Debug, Clone)]
pub struct TextMemory {
    pub h: Arc<Array2<f64>>,
    pub source: Vec<(Arc<Array2<f64>>, Arc<Array2<f64>>)>,
}

fn append_row(a: &Array2<f64>, row: &Array2<f64>) -> Array2<f64> {
    concatenate(Axis(0), &[a.view(), row.view()])
        .expect("row widths agree")
}

impl GraphEncoder {
    pub fn new(store: &mut ParamStore, c: &ModelConfig, v: &Vocabularies, rng: &mut impl Rng) -> Self {
        use dualamr_numeric::embedding;
        GraphEncoder {
            chars: CharCnn::new(store, "graph.chars", v.chars.len(), c.char_dim, c.char_filters, c.char_out, rng),
            concept: store.add("graph.concept", embedding(v.concept.len(), c.concept_dim, rng)),
            proj: Linear::new(store, "graph.proj", c.concept_dim + c.char_out, c.d, true, rng),
            layers: (0..c.graph_layers)
                .map(|i| DecoderLayer::new(store, &format!("graph.layer{i}"), c, rng))
                .collect(),
            d: c.d,
            source_attends_bos: c.source_attends_bos,
        }
    }

    /// Projected concept embeddings. Unknown labels share the UNK row but
    /// keep their own characters.
    pub fn embed(&self, t: &mut Tape, v: &Vocabularies, labels: &[String]) -> Var {
        let chars: Vec<Vec<usize>> = labels.iter().map(|l| v.char_ids(l)).collect();
        let ids: Vec<usize> = labels.iter().map(|l| v.concept.id(l)).collect();
        let c = self.chars.forward(t, &chars);
        let table = t.param(self.concept);
        let e = t.gather(table, &ids);
        let x = t.concat_cols(&[e, c]);
        self.proj.forward(t, x)
    }

    fn input(&self, t: &mut Tape, v: &Vocabularies, labels: &[String], start: usize) -> Var {
        let e = self.embed(t, v, labels);
        let p = t.constant(positions(start, labels.len(), self.d));
        let x = t.add(e, p);
        t.dropout(x)
    }

    /// Source-attention keys and values for every layer.
    pub fn source_kv(&self, t: &mut Tape, h: Var) -> Vec<(Var, Var)> {
        let src = if self.source_attends_bos {
            h
        } else {
            let n = t.value(h).nrows();
            t.slice_rows(h, 1, n - 1)
        };
        self.layers.iter().map(|l| l.src_attn.project_kv(t, src)).collect()
    }

    /// All node vectors of `labels` (which start with BOG) in one causal pass.
    pub fn forward_full(
        &self,
        t: &mut Tape,
        v: &Vocabularies,
        labels: &[String],
        source: &[(Var, Var)],
    ) -> Result<Var, NumericError> {
        let mask = causal_mask(labels.len());
        check_mask(&mask)?;
        let mut x = self.input(t, v, labels, 0);
        for (layer, &src) in self.layers.iter().zip(source) {
            let kv = layer.self_attn.project_kv(t, x);
            x = layer.forward(t, x, kv, Some(&mask), src)?;
        }
        Ok(x)
    }

    /// Vector of one new node at `position`, attending over cached keys and
    /// values. Returns the new row and the per-layer key/value rows to cache.
    pub fn forward_step(
        &self,
        t: &mut Tape,
        v: &Vocabularies,
        label: &str,
        position: usize,
        cache: &[(Var, Var)],
        source: &[(Var, Var)],
    ) -> Result<(Var, Vec<(Var, Var)>), NumericError> {
        let mut x = self.input(t, v, &[label.to_string()], position);
        let mut rows = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (k, v) = layer.self_attn.project_kv(t, x);
            let (keys, values) = match cache.get(i) {
                Some(&(ck, cv)) => (t.concat_rows(&[ck, k]), t.concat_rows(&[cv, v])),
                None => (k, v),
            };
            x = layer.forward(t, x, (keys, values), None, source[i])?;
            rows.push((k, v));
        }
        Ok((x, rows))
    }

    fn source_vars(t: &mut Tape, text: &TextMemory) -> Vec<(Var, Var)> {
        text.source
            .iter()
            .map(|(k, v)| (t.constant_arc(k.clone()), t.constant_arc(v.clone())))
            .collect()
    }

    /// Precomputes the source-attention projections of `h`.
    pub fn text_memory(&self, store: &ParamStore, h: Arc<Array2<f64>>) -> TextMemory {
        let mut t = Tape::new(store);
        let hv = t.constant_arc(h.clone());
        let source = self
            .source_kv(&mut t, hv)
            .into_iter()
            .map(|(k, v)| (t.value_arc(k), t.value_arc(v)))
            .collect();
        TextMemory { h, source }
    }

    /// Memory holding only the BOG dummy.
    pub fn start(&self, store: &ParamStore, v: &Vocabularies, text: &TextMemory) -> Result<GraphMemory, NumericError> {
        let empty = GraphMemory {
            labels: Vec::new(),
            cache: Vec::new(),
            s: Arc::new(Array2::zeros((0, self.d))),
        };
        self.extend(store, v, &empty, BOG, text)
    }

    /// Appends one node, reusing every cached key and value.
    pub fn extend(
        &self,
        store: &ParamStore,
        v: &Vocabularies,
        mem: &GraphMemory,
        label: &str,
        text: &TextMemory,
    ) -> Result<GraphMemory, NumericError> {
        let mut t = Tape::new(store);
        let source = Self::source_vars(&mut t, text);
        let cache: Vec<(Var, Var)> = mem
            .cache
            .iter()
            .map(|(k, v)| (t.constant_arc(k.clone()), t.constant_arc(v.clone())))
            .collect();
        let (row, kv) = self.forward_step(&mut t, v, label, mem.len(), &cache, &source)?;
        t.check()?;
        let cache = kv
            .iter()
            .enumerate()
            .map(|(i, &(k, vv))| match mem.cache.get(i) {
                Some((ck, cv)) => (
                    Arc::new(append_row(ck, t.value(k))),
                    Arc::new(append_row(cv, t.value(vv))),
                ),
                None => (t.value_arc(k), t.value_arc(vv)),
            })
            .collect();
        let mut labels = mem.labels.clone();
        labels.push(label.to_string());
        Ok(GraphMemory {
            labels,
            cache,
            s: Arc::new(append_row(&mem.s, t.value(row))),
        })
    }

    /// Full recomputation of `s_0 .. s_m` for BOG followed by `concepts`.
    pub fn encode_full(
        &self,
        store: &ParamStore,
        v: &Vocabularies,
        concepts: &[String],
        text: &TextMemory,
    ) -> Result<Array2<f64>, NumericError> {
        let mut t = Tape::new(store);
        let source = Self::source_vars(&mut t, text);
        let labels: Vec<String> = std::iter::once(BOG.to_string()).chain(concepts.iter().cloned()).collect();
        let s = self.forward_full(&mut t, v, &labels, &source)?;
        t.check()?;
        Ok(t.value(s).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::TokenColumns;
    use dualamr_graph::parse_penman;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn setup(layers: usize) -> (ModelConfig, Vocabularies, ParamStore, TextEncoder, GraphEncoder, SentenceInput) {
        let g = parse_penman("(w / want :ARG0 (b / boy) :ARG1 (g / go :ARG0 b))").unwrap();
        let tokens = strings(&["the", "boy", "wants", "to", "go"]);
        let lemmas = strings(&["the", "boy", "want", "to", "go"]);
        let pos = strings(&["DT", "NN", "VBZ", "TO", "VB"]);
        let ner = strings(&["O"; 5]);
        let v = Vocabularies::build(
            [TokenColumns {
                tokens: &tokens,
                lemmas: &lemmas,
                pos: &pos,
                ner: &ner,
            }],
            [&g],
            1,
        );
        let mut c = ModelConfig::tiny(8);
        c.text_layers = layers;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let text = TextEncoder::new(&mut store, &c, &v, &mut rng);
        let graph = GraphEncoder::new(&mut store, &c, &v, &mut rng);
        let s = SentenceInput::new(&v, &tokens, &lemmas, &pos, &ner);
        (c, v, store, text, graph, s)
    }

    #[test]
    fn text_memory_has_bos_row() {
        let (_, _, store, text, _, s) = setup(2);
        let mut t = Tape::new(&store);
        let h = text.forward(&mut t, &s).unwrap();
        assert_eq!(t.value(h).dim(), (6, 8));
    }

    #[test]
    fn zero_layers_gives_embeddings_plus_positions() {
        let (c, _, store, text, _, s) = setup(0);
        let mut t = Tape::new(&store);
        let h = text.forward(&mut t, &s).unwrap();
        let e = text.embed(&mut t, &s);
        let expected = t.value(e) + &positions(0, 6, c.d);
        assert_eq!(t.value(h), &expected);
    }

    #[test]
    fn swapping_tokens_changes_states() {
        let (_, v, store, text, _, s) = setup(2);
        let toks = strings(&["the", "go", "wants", "to", "boy"]);
        let lem = strings(&["the", "go", "want", "to", "boy"]);
        let pos = strings(&["DT", "NN", "VBZ", "TO", "VB"]);
        let swapped = SentenceInput::new(&v, &toks, &lem, &pos, &strings(&["O"; 5]));
        let mut t = Tape::new(&store);
        let a = text.forward(&mut t, &s).unwrap();
        let b = text.forward(&mut t, &swapped).unwrap();
        assert_ne!(t.value(a), t.value(b));
    }

    #[test]
    fn masked_lemma_changes_only_its_slice() {
        let (c, _, store, text, _, s) = setup(1);
        let mut m = s.clone();
        m.lemma_ids[2] = crate::vocab::UNK_ID;
        let mut t = Tape::new(&store);
        let a = text.features(&mut t, &s);
        let b = text.features(&mut t, &m);
        let diff = t.value(a) - t.value(b);
        for ((i, j), x) in diff.indexed_iter() {
            let in_lemma = i == 2 && (c.char_out..c.char_out + c.lemma_dim).contains(&j);
            assert_eq!(*x != 0.0, in_lemma, "({i},{j})");
        }
    }

    #[test]
    fn unseen_concept_differs_from_pure_unk() {
        let (_, v, store, _, graph, _) = setup(1);
        let mut t = Tape::new(&store);
        let a = graph.embed(&mut t, &v, &strings(&["boyz"]));
        let b = graph.embed(&mut t, &v, &strings(&[crate::vocab::UNK]));
        assert_ne!(t.value(a), t.value(b));
    }

    #[test]
    fn incremental_matches_full() {
        let (_, v, store, text, graph, s) = setup(1);
        let mut t = Tape::new(&store);
        let h = text.forward(&mut t, &s).unwrap();
        let mem = graph.text_memory(&store, t.value_arc(h));
        let concepts = strings(&["want", "boy", "go", "zzz", "boy"]);
        let full = graph.encode_full(&store, &v, &concepts, &mem).unwrap();
        let mut g = graph.start(&store, &v, &mem).unwrap();
        assert_eq!(g.len(), 1);
        for c in &concepts {
            g = graph.extend(&store, &v, &g, c, &mem).unwrap();
        }
        let gap = (&*g.s - &full).iter().fold(0f64, |m, x| m.max(x.abs()));
        assert!(gap <= 1e-12, "{gap}");
    }

    #[test]
    fn later_nodes_do_not_change_earlier_vectors() {
        let (_, v, store, text, graph, s) = setup(1);
        let mut t = Tape::new(&store);
        let h = text.forward(&mut t, &s).unwrap();
        let mem = graph.text_memory(&store, t.value_arc(h));
        let a = graph.encode_full(&store, &v, &strings(&["want", "boy", "go"]), &mem).unwrap();
        let b = graph.encode_full(&store, &v, &strings(&["want", "boy", "the", "to"]), &mem).unwrap();
        for i in 0..3 {
            assert_eq!(a.row(i), b.row(i));
        }
        assert_ne!(a.row(3), b.row(3));
    }
}
