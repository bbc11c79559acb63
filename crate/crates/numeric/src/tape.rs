//! Reverse-mode differentiation over 2-D `f64` matrices.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Values are
//! computed eagerly; [`Tape::backward`] walks the record in reverse. Vectors
//! are `1 x n` rows throughout.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::params::{ParamId, ParamStore};
use crate::NumericError;

/// Floor applied inside [`Tape::ln`].
pub const LN_EPS: f64 = 1e-12;
/// Variance epsilon of [`Tape::normalize`].
pub const NORM_EPS: f64 = 1e-5;

/// Handle to a value on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// `true` marks a position that may be attended to.
pub type Mask = Array2<bool>;

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Array2<f64>),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Softmax(Var),
    Normalize(Var, Array1<f64>),
    Gather(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Sum(Var),
    SumRows(Var),
    SumCols(Var),
    GatherElems(Var, Vec<(usize, usize)>),
    Ln(Var),
    Max(Vec<Var>, Vec<usize>),
    SegmentMax(Var, Vec<usize>),
    RowBlockDot(Var, Var),
}

struct Node {
    value: Arc<Array2<f64>>,
    op: Op,
}

/// A recording of one forward computation.
pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    dropout: Option<(f64, ChaCha8Rng)>,
    error: Option<NumericError>,
}

/// Gradients of one scalar with respect to every node of a tape.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    /// Parameter gradients aligned with [`ParamStore`] ids; `None` for
    /// parameters the loss does not depend on.
    pub fn into_params(mut self, count: usize) -> Vec<Option<Array2<f64>>> {
        let mut out = vec![None; count];
        for (id, v) in self.params {
            out[id.0] = self.grads[v.0].take();
        }
        out
    }
}

fn shape(a: &Array2<f64>) -> String {
    format!("{}x{}", a.nrows(), a.ncols())
}

impl<'a> Tape<'a> {
    /// Evaluation tape: dropout is the identity.
    pub fn new(store: &'a ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            params: HashMap::new(),
            dropout: None,
            error: None,
        }
    }

    /// Training tape with inverted dropout at `rate`.
    pub fn training(store: &'a ParamStore, rate: f64, seed: u64) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        let mut t = Tape::new(store);
        t.dropout = Some((rate, ChaCha8Rng::seed_from_u64(seed)));
        t
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn is_training(&self) -> bool {
        self.dropout.is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The first numeric failure seen while recording, if any.
    pub fn error(&self) -> Option<&NumericError> {
        self.error.as_ref()
    }

    pub fn check(&self) -> Result<(), NumericError> {
        match &self.error {
            Some(e) => Err(e.clone()),
            None => Ok(()),
        }
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn value_arc(&self, v: Var) -> Arc<Array2<f64>> {
        self.nodes[v.0].value.clone()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let a = self.value(v);
        assert_eq!(a.dim(), (1, 1), "scalar() on a {} value", shape(a));
        a[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op, name: &'static str) -> Var {
        if self.error.is_none() && !value.iter().all(|x| x.is_finite()) {
            self.error = Some(NumericError::NonFinite(name));
        }
        self.push_arc(Arc::new(value), op)
    }

    fn push_arc(&mut self, value: Arc<Array2<f64>>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn fail(&mut self, e: NumericError) {
        if self.error.is_none() {
            self.error = Some(e);
        }
    }

    /// A value that receives no parameter gradient (gradients are still
    /// reported through [`Gradients::wrt`]).
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, "constant")
    }

    pub fn constant_arc(&mut self, value: Arc<Array2<f64>>) -> Var {
        self.push_arc(value, Op::Leaf)
    }

    pub fn row(&mut self, values: &[f64]) -> Var {
        self.constant(Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape"))
    }

    /// The parameter as a node; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let value = self.store.shared(id);
        let v = self.push_arc(value, Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.ncols(), y.nrows(), "shape mismatch: matmul {} . {}", shape(x), shape(y));
        let v = x.dot(y);
        self.push(v, Op::MatMul(a, b), "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a), "transpose")
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.dim(), y.dim(), "shape mismatch: {what} {} vs {}", shape(x), shape(y));
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b), "sub")
    }

    /// Adds the `1 x c` row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let (x, y) = (self.value(a), self.value(r));
        assert!(y.nrows() == 1 && y.ncols() == x.ncols(), "shape mismatch: add_row {} + {}", shape(x), shape(y));
        let v = x + y;
        self.push(v, Op::AddRow(a, r), "add_row")
    }

    /// Multiplies every row of `a` elementwise by the `1 x c` row `r`.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Var {
        let (x, y) = (self.value(a), self.value(r));
        assert!(y.nrows() == 1 && y.ncols() == x.ncols(), "shape mismatch: mul_row {} * {}", shape(x), shape(y));
        let v = x * y;
        self.push(v, Op::MulRow(a, r), "mul_row")
    }

    /// Scales row `i` of `a` by `c[i, 0]`.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Var {
        let (x, y) = (self.value(a), self.value(c));
        assert!(y.ncols() == 1 && y.nrows() == x.nrows(), "shape mismatch: mul_col {} * {}", shape(x), shape(y));
        let v = x * y;
        self.push(v, Op::MulCol(a, c), "mul_col")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b), "mul")
    }

    /// Elementwise product with a constant matrix.
    pub fn mul_const(&mut self, a: Var, c: Array2<f64>) -> Var {
        let x = self.value(a);
        assert_eq!(x.dim(), c.dim(), "shape mismatch: mul_const {} * {}", shape(x), shape(&c));
        let v = x * &c;
        self.push(v, Op::MulConst(a, c), "mul_const")
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k), "scale")
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) + k;
        self.push(v, Op::AddScalar(a), "add_scalar")
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a), "relu")
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let z = row.sum();
            row /= z;
        }
        self.push(v, Op::Softmax(a), "softmax")
    }

    /// Row-wise softmax where `mask[i, j] == false` forces weight exactly 0.
    /// A row with no allowed position comes out all zero and marks the tape
    /// with [`NumericError::FullyMaskedRow`].
    pub fn masked_softmax(&mut self, a: Var, mask: &Mask) -> Var {
        let x = self.value(a);
        assert_eq!(x.dim(), mask.dim(), "shape mismatch: mask {:?} on {}", mask.dim(), shape(x));
        let mut v = Array2::zeros(x.dim());
        let mut bad = None;
        for (i, ((mut out, row), allowed)) in v
            .rows_mut()
            .into_iter()
            .zip(x.rows())
            .zip(mask.rows())
            .enumerate()
        {
            let m = row
                .iter()
                .zip(allowed)
                .filter(|(_, &ok)| ok)
                .fold(f64::NEG_INFINITY, |m, (&x, _)| m.max(x));
            if m == f64::NEG_INFINITY {
                bad.get_or_insert(i);
                continue;
            }
            let mut z = 0.0;
            for ((o, &x), &ok) in out.iter_mut().zip(row).zip(allowed) {
                if ok {
                    *o = (x - m).exp();
                    z += *o;
                }
            }
            out /= z;
        }
        if let Some(i) = bad {
            self.fail(NumericError::FullyMaskedRow(i));
        }
        self.push(v, Op::Softmax(a), "masked_softmax")
    }

    /// Row-wise `(x - mean) / sqrt(var + eps)`.
    pub fn normalize(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let c = x.ncols() as f64;
        let mut v = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, s) in v.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / c;
            row -= mean;
            let var = row.iter().map(|x| x * x).sum::<f64>() / c;
            *s = 1.0 / (var + NORM_EPS).sqrt();
            row *= *s;
        }
        self.push(v, Op::Normalize(a, inv_std), "normalize")
    }

    /// Inverted dropout on a training tape, identity otherwise.
    pub fn dropout(&mut self, a: Var) -> Var {
        let Some((rate, rng)) = self.dropout.as_mut() else {
            return a;
        };
        let rate = *rate;
        if rate == 0.0 {
            return a;
        }
        let keep = 1.0 / (1.0 - rate);
        let dim = self.nodes[a.0].value.dim();
        let mask = Array2::from_shape_simple_fn(dim, || if rng.gen::<f64>() < rate { 0.0 } else { keep });
        self.mul_const(a, mask)
    }

    /// Rows of `table` at `idx`, in order (embedding lookup).
    pub fn gather(&mut self, table: Var, idx: &[usize]) -> Var {
        let t = self.value(table);
        let mut v = Array2::zeros((idx.len(), t.ncols()));
        for (mut row, &i) in v.rows_mut().into_iter().zip(idx) {
            assert!(i < t.nrows(), "gather index {i} out of range for {}", shape(t));
            row.assign(&t.row(i));
        }
        self.push(v, Op::Gather(table, idx.to_vec()), "gather")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("shape mismatch: concat_cols");
        self.push(v, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("shape mismatch: concat_rows");
        self.push(v, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols(a, start), "slice_cols")
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start), "slice_rows")
    }

    /// Sum of all entries as a `1 x 1` value.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a), "sum")
    }

    /// Column sums as a `1 x c` row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(v, Op::SumRows(a), "sum_rows")
    }

    /// Row sums as an `r x 1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::SumCols(a), "sum_cols")
    }

    /// Picks `a[i, j]` for every pair, as a `k x 1` column.
    pub fn gather_elems(&mut self, a: Var, at: &[(usize, usize)]) -> Var {
        let x = self.value(a);
        let v = Array2::from_shape_fn((at.len(), 1), |(k, _)| x[at[k]]);
        self.push(v, Op::GatherElems(a, at.to_vec()), "gather_elems")
    }

    /// Natural log of `max(x, LN_EPS)`.
    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(LN_EPS).ln());
        self.push(v, Op::Ln(a), "ln")
    }

    /// Elementwise maximum over same-shaped values; ties go to the earliest.
    pub fn max(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "max of nothing");
        let mut v = self.value(parts[0]).clone();
        let mut arg = vec![0usize; v.len()];
        for (k, &p) in parts.iter().enumerate().skip(1) {
            let x = self.value(p);
            assert_eq!(x.dim(), v.dim(), "shape mismatch: max");
            for ((cur, a), &x) in v.iter_mut().zip(arg.iter_mut()).zip(x.iter()) {
                if x > *cur {
                    *cur = x;
                    *a = k;
                }
            }
        }
        self.push(v, Op::Max(parts.to_vec(), arg), "max")
    }

    /// Column-wise max over each consecutive block of rows; `lens` gives the
    /// block sizes. Output has one row per block.
    pub fn segment_max(&mut self, a: Var, lens: &[usize]) -> Var {
        let x = self.value(a);
        assert_eq!(lens.iter().sum::<usize>(), x.nrows(), "segment lengths do not cover {}", shape(x));
        let mut v = Array2::zeros((lens.len(), x.ncols()));
        let mut arg = vec![0usize; lens.len() * x.ncols()];
        let mut start = 0;
        for (s, &len) in lens.iter().enumerate() {
            assert!(len > 0, "empty segment");
            for j in 0..x.ncols() {
                let mut best = start;
                for i in start + 1..start + len {
                    if x[[i, j]] > x[[best, j]] {
                        best = i;
                    }
                }
                v[[s, j]] = x[[best, j]];
                arg[s * x.ncols() + j] = best;
            }
            start += len;
        }
        self.push(v, Op::SegmentMax(a, arg), "segment_max")
    }

    /// For `a: r x (L*p)` and `b: r x p`, output `r x L` with
    /// `out[i, l] = sum_k a[i, l*p + k] * b[i, k]`.
    pub fn row_block_dot(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        let p = y.ncols();
        assert!(
            x.nrows() == y.nrows() && p > 0 && x.ncols() % p == 0,
            "shape mismatch: row_block_dot {} with {}",
            shape(x),
            shape(y)
        );
        let l = x.ncols() / p;
        let mut v = Array2::zeros((x.nrows(), l));
        for i in 0..x.nrows() {
            for k in 0..l {
                v[[i, k]] = x.slice(s![i, k * p..(k + 1) * p]).dot(&y.row(i));
            }
        }
        self.push(v, Op::RowBlockDot(a, b), "row_block_dot")
    }

    /// Gradients of the `1 x 1` value `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericError> {
        self.check()?;
        let l = self.value(loss);
        assert_eq!(l.dim(), (1, 1), "backward from a {} value", shape(l));
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        if grads.iter().flatten().any(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(NumericError::NonFinite("backward"));
        }
        Ok(Gradients {
            grads,
            params: self.params.iter().map(|(&id, &v)| (id, v)).collect(),
        })
    }

    fn backprop(&self, i: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let out = &self.nodes[i].value;
        let val = |v: Var| &*self.nodes[v.0].value;
        let mut acc = |v: Var, d: Array2<f64>| match &mut grads[v.0] {
            Some(x) => *x += &d,
            slot => *slot = Some(d),
        };
        match &self.nodes[i].op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                acc(*a, g.dot(&val(*b).t()));
                acc(*b, val(*a).t().dot(g));
            }
            Op::Transpose(a) => acc(*a, g.t().to_owned()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::AddRow(a, r) => {
                acc(*a, g.clone());
                acc(*r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::MulRow(a, r) => {
                acc(*a, g * val(*r));
                acc(*r, (g * val(*a)).sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::MulCol(a, c) => {
                acc(*a, g * val(*c));
                acc(*c, (g * val(*a)).sum_axis(Axis(1)).insert_axis(Axis(1)));
            }
            Op::Mul(a, b) => {
                acc(*a, g * val(*b));
                acc(*b, g * val(*a));
            }
            Op::MulConst(a, c) => acc(*a, g * c),
            Op::Scale(a, k) => acc(*a, g * *k),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(val(*a)).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d = 0.0;
                    }
                });
                acc(*a, d);
            }
            Op::Softmax(a) => {
                let mut d = g * &**out;
                for (mut row, y) in d.rows_mut().into_iter().zip(out.rows()) {
                    let dot = row.sum();
                    row.zip_mut_with(&y, |r, &y| *r -= y * dot);
                }
                acc(*a, d);
            }
            Op::Normalize(a, inv_std) => {
                let c = out.ncols() as f64;
                let mut d = Array2::zeros(out.dim());
                for (((mut dr, gr), yr), &s) in d
                    .rows_mut()
                    .into_iter()
                    .zip(g.rows())
                    .zip(out.rows())
                    .zip(inv_std.iter())
                {
                    let mg = gr.sum() / c;
                    let mgy = gr.dot(&yr) / c;
                    Zip::from(&mut dr)
                        .and(&gr)
                        .and(&yr)
                        .for_each(|d, &g, &y| *d = s * (g - mg - y * mgy));
                }
                acc(*a, d);
            }
            Op::Gather(t, idx) => {
                let mut d = Array2::zeros(val(*t).dim());
                for (row, &k) in g.rows().into_iter().zip(idx) {
                    let mut target = d.row_mut(k);
                    target += &row;
                }
                acc(*t, d);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = val(p).ncols();
                    acc(p, g.slice(s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let h = val(p).nrows();
                    acc(p, g.slice(s![start..start + h, ..]).to_owned());
                    start += h;
                }
            }
            Op::SliceCols(a, start) => {
                let mut d = Array2::zeros(val(*a).dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                acc(*a, d);
            }
            Op::SliceRows(a, start) => {
                let mut d = Array2::zeros(val(*a).dim());
                d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                acc(*a, d);
            }
            Op::Sum(a) => acc(*a, Array2::from_elem(val(*a).dim(), g[[0, 0]])),
            Op::SumRows(a) => {
                let d = Array2::from_shape_fn(val(*a).dim(), |(_, j)| g[[0, j]]);
                acc(*a, d);
            }
            Op::SumCols(a) => {
                let d = Array2::from_shape_fn(val(*a).dim(), |(i, _)| g[[i, 0]]);
                acc(*a, d);
            }
            Op::GatherElems(a, at) => {
                let mut d = Array2::zeros(val(*a).dim());
                for (k, &ij) in at.iter().enumerate() {
                    d[ij] += g[[k, 0]];
                }
                acc(*a, d);
            }
            Op::Ln(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(val(*a)).for_each(|d, &x| {
                    *d = if x > LN_EPS { *d / x } else { 0.0 };
                });
                acc(*a, d);
            }
            Op::Max(parts, arg) => {
                for (k, &p) in parts.iter().enumerate() {
                    let mut d = g.clone();
                    for (d, &a) in d.iter_mut().zip(arg) {
                        if a != k {
                            *d = 0.0;
                        }
                    }
                    acc(p, d);
                }
            }
            Op::SegmentMax(a, arg) => {
                let x = val(*a);
                let mut d = Array2::zeros(x.dim());
                let c = x.ncols();
                for (k, &row) in arg.iter().enumerate() {
                    d[[row, k % c]] += g[[k / c, k % c]];
                }
                acc(*a, d);
            }
            Op::RowBlockDot(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let p = y.ncols();
                let mut da = Array2::zeros(x.dim());
                let mut db = Array2::zeros(y.dim());
                for r in 0..x.nrows() {
                    for l in 0..g.ncols() {
                        let gl = g[[r, l]];
                        for k in 0..p {
                            da[[r, l * p + k]] = gl * y[[r, k]];
                            db[[r, k]] += gl * x[[r, l * p + k]];
                        }
                    }
                }
                acc(*a, da);
                acc(*b, db);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn store() -> ParamStore {
        ParamStore::new()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let s = store();
        let mut t = Tape::new(&s);
        let x = t.row(&[0.0, 0.0]);
        let y = t.softmax(x);
        assert_eq!(t.value(y), &array![[0.5, 0.5]]);
    }

    #[test]
    fn softmax_sum_has_zero_gradient() {
        let s = store();
        let mut t = Tape::new(&s);
        let x = t.row(&[0.3, -1.2, 2.0]);
        let y = t.softmax(x);
        let l = t.sum(y);
        let g = t.backward(l).unwrap();
        assert!(g.wrt(x).unwrap().iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn masked_positions_are_exactly_zero() {
        let s = store();
        let mut t = Tape::new(&s);
        let x = t.constant(array![[1.0, 5.0, 2.0], [3.0, 3.0, 3.0]]);
        let m = array![[true, false, true], [false, true, true]];
        let y = t.masked_softmax(x, &m);
        let v = t.value(y);
        assert_eq!(v[[0, 1]], 0.0);
        assert_eq!(v[[1, 0]], 0.0);
        assert!((v[[1, 1]] - 0.5).abs() < 1e-15);
        assert!(t.check().is_ok());
        let m = array![[false, false, false], [true, true, true]];
        t.masked_softmax(x, &m);
        assert_eq!(t.check(), Err(NumericError::FullyMaskedRow(0)));
    }

    #[test]
    fn normalize_constant_row_is_zero() {
        let s = store();
        let mut t = Tape::new(&s);
        let x = t.row(&[4.0, 4.0, 4.0, 4.0]);
        let y = t.normalize(x);
        assert!(t.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_values_are_reported() {
        let s = store();
        let mut t = Tape::new(&s);
        let x = t.row(&[f64::MAX, 1.0]);
        let y = t.scale(x, 10.0);
        let l = t.sum(y);
        assert!(matches!(t.backward(l), Err(NumericError::NonFinite("scale"))));
    }

    #[test]
    fn dropout_is_identity_in_eval_and_scales_in_training() {
        let s = store();
        let mut t = Tape::new(&s);
        let x = t.constant(Array2::ones((20, 50)));
        assert_eq!(t.dropout(x), x);
        let mut t = Tape::training(&s, 0.25, 7);
        let x = t.constant(Array2::ones((20, 50)));
        let y = t.dropout(x);
        let v = t.value(y);
        assert!(v.iter().all(|&e| e == 0.0 || (e - 1.0 / 0.75).abs() < 1e-15));
        let kept = v.iter().filter(|&&e| e > 0.0).count() as f64 / 1000.0;
        assert!((kept - 0.75).abs() < 0.05);
    }

    #[test]
    fn params_are_memoized_and_collected() {
        let mut s = store();
        let w = s.add("w", array![[2.0]]);
        let mut t = Tape::new(&s);
        let a = t.param(w);
        assert_eq!(t.param(w), a);
        let b = t.mul(a, a);
        let g = t.backward(b).unwrap().into_params(s.len());
        assert_eq!(g[0].as_ref().unwrap()[[0, 0]], 4.0);
    }

    #[test]
    fn row_block_dot_matches_loops() {
        let s = store();
        let mut t = Tape::new(&s);
        let a = t.constant(array![[1.0, 2.0, 3.0, 4.0], [0.5, 0.0, -1.0, 1.0]]);
        let b = t.constant(array![[1.0, -1.0], [2.0, 3.0]]);
        let c = t.row_block_dot(a, b);
        assert_eq!(t.value(c), &array![[-1.0, -1.0], [1.0, 1.0]]);
    }

    #[test]
    fn segment_max_pools_blocks() {
        let s = store();
        let mut t = Tape::new(&s);
        let a = t.constant(array![[1.0, 9.0], [3.0, 2.0], [5.0, 0.0]]);
        let m = t.segment_max(a, &[2, 1]);
        assert_eq!(t.value(m), &array![[3.0, 9.0], [5.0, 0.0]]);
    }
}
