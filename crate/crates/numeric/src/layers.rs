//! Neural building blocks. Each holds parameter ids into a [`ParamStore`]
//! and records its forward pass on a [`Tape`].

use ndarray::Array2;
use rand::Rng;

use crate::params::{embedding, xavier, ParamId, ParamStore};
use crate::tape::{Mask, Tape, Var};
use crate::NumericError;

/// Character id reserved for padding short words.
pub const CHAR_PAD: usize = 0;

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let w = store.add(format!("{name}.w"), xavier(d_in, d_out, rng));
        let b = bias.then(|| store.add(format!("{name}.b"), Array2::zeros((1, d_out))));
        Linear { w, b }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let w = t.param(self.w);
        let y = t.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = t.param(b);
                t.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Row-wise layer normalization with a learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), Array2::ones((1, d))),
            bias: store.add(format!("{name}.bias"), Array2::zeros((1, d))),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let n = t.normalize(x);
        let g = t.param(self.gain);
        let b = t.param(self.bias);
        let y = t.mul_row(n, g);
        t.add_row(y, b)
    }
}

/// Two linear layers with a ReLU between them.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, hidden: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        FeedForward {
            inner: Linear::new(store, &format!("{name}.inner"), d, hidden, true, rng),
            outer: Linear::new(store, &format!("{name}.outer"), hidden, d_out, true, rng),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let h = self.inner.forward(t, x);
        let h = t.relu(h);
        let h = t.dropout(h);
        self.outer.forward(t, h)
    }
}

/// Scaled dot-product attention over `heads` equal slices of the model width.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub d: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

/// Per-head attention weights of one call, in head order.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub context: Var,
    pub weights: Vec<Var>,
}

/// Rejects masks that leave some query row without any attendable key.
pub fn check_mask(mask: &Mask) -> Result<(), NumericError> {
    match mask.rows().into_iter().position(|r| !r.iter().any(|&ok| ok)) {
        Some(i) => Err(NumericError::FullyMaskedRow(i)),
        None => Ok(()),
    }
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert!(heads > 0 && d % heads == 0, "{heads} heads do not divide width {d}");
        MultiHeadAttention {
            heads,
            d,
            q: Linear::new(store, &format!("{name}.q"), d, d, true, rng),
            k: Linear::new(store, &format!("{name}.k"), d, d, true, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, true, rng),
            o: Linear::new(store, &format!("{name}.o"), d, d, true, rng),
        }
    }

    /// Key and value projections of `memory`; cacheable across queries.
    pub fn project_kv(&self, t: &mut Tape, memory: Var) -> (Var, Var) {
        (self.k.forward(t, memory), self.v.forward(t, memory))
    }

    /// Attends from `query` rows over projected keys/values.
    pub fn attend(&self, t: &mut Tape, query: Var, k: Var, v: Var, mask: Option<&Mask>) -> Result<AttentionOutput, NumericError> {
        if let Some(m) = mask {
            check_mask(m)?;
        }
        let q = self.q.forward(t, query);
        let dk = self.d / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut contexts = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = t.slice_cols(q, h * dk, dk);
            let kh = t.slice_cols(k, h * dk, dk);
            let vh = t.slice_cols(v, h * dk, dk);
            let kt = t.transpose(kh);
            let scores = t.matmul(qh, kt);
            let scores = t.scale(scores, scale);
            let w = match mask {
                Some(m) => t.masked_softmax(scores, m),
                None => t.softmax(scores),
            };
            contexts.push(t.matmul(w, vh));
            weights.push(w);
        }
        let joined = if contexts.len() == 1 { contexts[0] } else { t.concat_cols(&contexts) };
        let context = self.o.forward(t, joined);
        Ok(AttentionOutput { context, weights })
    }

    pub fn forward(&self, t: &mut Tape, query: Var, memory: Var, mask: Option<&Mask>) -> Result<AttentionOutput, NumericError> {
        let (k, v) = self.project_kv(t, memory);
        self.attend(t, query, k, v, mask)
    }
}

/// Character-level CNN: window-3 convolution, ReLU, max over positions,
/// then a linear projection.
#[derive(Debug, Clone)]
pub struct CharCnn {
    pub table: ParamId,
    pub conv: Linear,
    pub proj: Linear,
    pub ngram: usize,
}

impl CharCnn {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        chars: usize,
        dim: usize,
        filters: usize,
        out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let ngram = 3;
        CharCnn {
            table: store.add(format!("{name}.table"), embedding(chars, dim, rng)),
            conv: Linear::new(store, &format!("{name}.conv"), ngram * dim, filters, true, rng),
            proj: Linear::new(store, &format!("{name}.proj"), filters, out, true, rng),
            ngram,
        }
    }

    /// Pooled filter activations, one row per word, before projection.
    pub fn features(&self, t: &mut Tape, words: &[Vec<usize>]) -> Var {
        assert!(!words.is_empty(), "char_cnn needs at least one word");
        let mut lens = Vec::with_capacity(words.len());
        let mut columns: Vec<Vec<usize>> = vec![Vec::new(); self.ngram];
        for w in words {
            let mut ids = w.clone();
            ids.resize(ids.len().max(self.ngram), CHAR_PAD);
            let windows = ids.len() - self.ngram + 1;
            for (k, col) in columns.iter_mut().enumerate() {
                col.extend_from_slice(&ids[k..k + windows]);
            }
            lens.push(windows);
        }
        let table = t.param(self.table);
        let parts: Vec<Var> = columns.iter().map(|ids| t.gather(table, ids)).collect();
        let x = t.concat_cols(&parts);
        let c = self.conv.forward(t, x);
        let c = t.relu(c);
        t.segment_max(c, &lens)
    }

    pub fn forward(&self, t: &mut Tape, words: &[Vec<usize>]) -> Var {
        let f = self.features(t, words);
        self.proj.forward(t, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_key_gets_all_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut s, "att", 4, 2, &mut rng);
        let mut t = Tape::new(&s);
        let q = t.constant(array![[0.3, -2.0, 1.0, 0.5], [1.0, 1.0, 1.0, 1.0]]);
        let m = t.constant(array![[0.7, 0.1, -0.4, 2.0]]);
        let out = mha.forward(&mut t, q, m, None).unwrap();
        for w in out.weights {
            assert!(t.value(w).iter().all(|&x| x == 1.0));
        }
    }

    #[test]
    fn identical_keys_give_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut s, "att", 4, 2, &mut rng);
        let mut t = Tape::new(&s);
        let q = t.constant(array![[0.3, -2.0, 1.0, 0.5]]);
        let m = t.constant(Array2::from_elem((3, 4), 0.25));
        let out = mha.forward(&mut t, q, m, None).unwrap();
        for w in out.weights {
            assert!(t.value(w).iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        }
    }

    #[test]
    fn fully_masked_row_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut s, "att", 4, 1, &mut rng);
        let mut t = Tape::new(&s);
        let q = t.constant(Array2::ones((2, 4)));
        let m = t.constant(Array2::ones((2, 4)));
        let mask = array![[true, false], [false, false]];
        assert_eq!(
            mha.forward(&mut t, q, m, Some(&mask)).err(),
            Some(NumericError::FullyMaskedRow(1))
        );
    }

    #[test]
    fn char_cnn_output_width_is_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        let cnn = CharCnn::new(&mut s, "cnn", 20, 8, 16, 12, &mut rng);
        let mut t = Tape::new(&s);
        let out = cnn.forward(&mut t, &[vec![5], vec![1, 2, 3, 4, 5, 6, 7], vec![9, 9]]);
        assert_eq!(t.value(out).dim(), (3, 12));
    }

    #[test]
    fn permuting_filters_permutes_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = ParamStore::new();
        let cnn = CharCnn::new(&mut s, "cnn", 20, 4, 6, 5, &mut rng);
        let words = [vec![3, 4, 5, 6]];
        let before = {
            let mut t = Tape::new(&s);
            let f = cnn.features(&mut t, &words);
            t.value(f).clone()
        };
        let perm = [5, 4, 3, 2, 1, 0];
        let w = s.get(cnn.conv.w).clone();
        let b = s.get(cnn.conv.b.unwrap()).clone();
        for (new, &old) in perm.iter().enumerate() {
            s.get_mut(cnn.conv.w).column_mut(new).assign(&w.column(old));
            s.get_mut(cnn.conv.b.unwrap())[[0, new]] = b[[0, old]];
        }
        let mut t = Tape::new(&s);
        let f = cnn.features(&mut t, &words);
        for (new, &old) in perm.iter().enumerate() {
            assert_eq!(t.value(f)[[0, new]], before[[0, old]]);
        }
    }
}
