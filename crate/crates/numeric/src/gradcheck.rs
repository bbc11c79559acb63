//! Finite-difference verification of analytic gradients.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layers::{CharCnn, FeedForward, LayerNorm, MultiHeadAttention};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::NumericError;

/// Denominator floor for the relative error, so that near-zero gradients are
/// judged by absolute error instead.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// parameter name and flat index of the worst entry
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences with step `eps`, for every entry of every parameter in
/// `store`. `f` must be deterministic; it runs on evaluation tapes.
pub fn grad_check(
    store: &mut ParamStore,
    eps: f64,
    f: impl Fn(&mut Tape) -> Result<Var, NumericError>,
) -> Result<GradCheck, NumericError> {
    let analytic = {
        let mut t = Tape::new(store);
        let loss = f(&mut t)?;
        t.backward(loss)?.into_params(store.len())
    };
    let eval = |store: &ParamStore| -> Result<f64, NumericError> {
        let mut t = Tape::new(store);
        let loss = f(&mut t)?;
        t.check()?;
        Ok(t.scalar(loss))
    };
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let cols = store.get(id).ncols();
        for k in 0..store.get(id).len() {
            let at = [k / cols, k % cols];
            let orig = store.get(id)[at];
            store.get_mut(id)[at] = orig + eps;
            let plus = eval(store)?;
            store.get_mut(id)[at] = orig - eps;
            let minus = eval(store)?;
            store.get_mut(id)[at] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[id.0].as_ref().map_or(0.0, |g| g[at]);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((store.name(id).to_string(), k));
            }
        }
    }
    Ok(report)
}

type Case = (&'static str, ParamStore, Box<dyn Fn(&mut Tape) -> Result<Var, NumericError>>);

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-1.0..1.0))
}

/// Reduces `x` to a scalar through fixed random weights, so that no
/// gradient is trivially zero by symmetry.
fn project(t: &mut Tape, x: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, c) = t.value(x).dim();
    let w = uniform(&mut rng, r, c);
    let y = t.mul_const(x, w);
    t.sum(y)
}

fn params(rng: &mut ChaCha8Rng, shapes: &[(&str, usize, usize)]) -> ParamStore {
    let mut s = ParamStore::new();
    for &(name, r, c) in shapes {
        s.add(name, uniform(rng, r, c));
    }
    s
}

fn p(t: &mut Tape, i: usize) -> Var {
    t.param(ParamId(i))
}

/// Every differentiable tape operation and layer, each on small random
/// inputs.
fn cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Case> = Vec::new();
    macro_rules! case {
        ($name:expr, $shapes:expr, $f:expr) => {
            out.push(($name, params(&mut rng, $shapes), Box::new($f)));
        };
    }
    case!("matmul", &[("a", 3, 4), ("b", 4, 2)], |t| {
        let (a, b) = (p(t, 0), p(t, 1));
        let y = t.matmul(a, b);
        Ok(project(t, y, 1))
    });
    case!("transpose", &[("a", 3, 2)], |t| {
        let a = p(t, 0);
        let y = t.transpose(a);
        Ok(project(t, y, 2))
    });
    case!("add_sub_mul", &[("a", 2, 3), ("b", 2, 3)], |t| {
        let (a, b) = (p(t, 0), p(t, 1));
        let s = t.add(a, b);
        let d = t.sub(a, b);
        let y = t.mul(s, d);
        Ok(project(t, y, 3))
    });
    case!("row_col_broadcast", &[("a", 3, 4), ("r", 1, 4), ("c", 3, 1)], |t| {
        let (a, r, c) = (p(t, 0), p(t, 1), p(t, 2));
        let y = t.add_row(a, r);
        let y = t.mul_row(y, r);
        let y = t.mul_col(y, c);
        Ok(project(t, y, 4))
    });
    case!("scale_shift", &[("a", 2, 2)], |t| {
        let a = p(t, 0);
        let y = t.scale(a, -1.7);
        let y = t.add_scalar(y, 0.3);
        let y = t.mul(y, y);
        Ok(project(t, y, 5))
    });
    case!("relu", &[("a", 4, 5)], |t| {
        let a = p(t, 0);
        let y = t.relu(a);
        Ok(project(t, y, 6))
    });
    case!("softmax", &[("a", 3, 5)], |t| {
        let a = p(t, 0);
        let y = t.softmax(a);
        Ok(project(t, y, 7))
    });
    case!("masked_softmax", &[("a", 3, 4)], |t| {
        let a = p(t, 0);
        let m = ndarray::array![
            [true, false, true, true],
            [false, true, false, false],
            [true, true, true, false]
        ];
        let y = t.masked_softmax(a, &m);
        Ok(project(t, y, 8))
    });
    case!("softmax_cross_entropy", &[("a", 1, 6)], |t| {
        let a = p(t, 0);
        let y = t.softmax(a);
        let y = t.ln(y);
        let y = t.gather_elems(y, &[(0, 2)]);
        let y = t.sum(y);
        Ok(t.neg(y))
    });
    case!("normalize", &[("a", 3, 6)], |t| {
        let a = p(t, 0);
        let y = t.normalize(a);
        Ok(project(t, y, 9))
    });
    case!("gather_concat_slice", &[("table", 5, 3), ("b", 2, 3)], |t| {
        let (tab, b) = (p(t, 0), p(t, 1));
        let g = t.gather(tab, &[4, 0, 4]);
        let g2 = t.slice_rows(g, 1, 2);
        let rows = t.concat_rows(&[g2, b]);
        let cols = t.concat_cols(&[rows, rows]);
        let y = t.slice_cols(cols, 2, 3);
        Ok(project(t, y, 12))
    });
    case!("reductions", &[("a", 3, 4)], |t| {
        let a = p(t, 0);
        let r = t.sum_rows(a);
        let c = t.sum_cols(a);
        let rr = t.mul(r, r);
        let cc = t.mul(c, c);
        let x = project(t, rr, 13);
        let y = project(t, cc, 14);
        Ok(t.add(x, y))
    });
    case!("ln", &[("a", 2, 3)], |t| {
        let a = p(t, 0);
        let y = t.mul(a, a);
        let y = t.add_scalar(y, 0.5);
        let y = t.ln(y);
        Ok(project(t, y, 15))
    });
    case!("max", &[("a", 2, 3), ("b", 2, 3), ("c", 2, 3)], |t| {
        let (a, b, c) = (p(t, 0), p(t, 1), p(t, 2));
        let y = t.max(&[a, b, c]);
        Ok(project(t, y, 16))
    });
    case!("segment_max", &[("a", 5, 3)], |t| {
        let a = p(t, 0);
        let y = t.segment_max(a, &[2, 3]);
        Ok(project(t, y, 17))
    });
    case!("row_block_dot", &[("a", 2, 6), ("b", 2, 3)], |t| {
        let (a, b) = (p(t, 0), p(t, 1));
        let y = t.row_block_dot(a, b);
        Ok(project(t, y, 18))
    });
    out.push(layer_case("linear_ffn_layer_norm", seed, |s, rng| {
        let ffn = FeedForward::new(s, "ffn", 4, 6, 3, rng);
        let ln = LayerNorm::new(s, "ln", 3);
        let x = s.add("x", uniform(rng, 2, 4));
        Box::new(move |t| {
            let x = t.param(x);
            let y = ffn.forward(t, x);
            let y = ln.forward(t, y);
            Ok(project(t, y, 19))
        })
    }));
    out.push(layer_case("multi_head_attention", seed, |s, rng| {
        let mha = MultiHeadAttention::new(s, "att", 4, 2, rng);
        let q = s.add("q", uniform(rng, 2, 4));
        let m = s.add("m", uniform(rng, 3, 4));
        Box::new(move |t| {
            let (q, m) = (t.param(q), t.param(m));
            let mask = ndarray::array![[true, true, false], [true, false, true]];
            let out = mha.forward(t, q, m, Some(&mask))?;
            Ok(project(t, out.context, 20))
        })
    }));
    out.push(layer_case("char_cnn", seed, |s, rng| {
        let cnn = CharCnn::new(s, "cnn", 8, 3, 5, 4, rng);
        Box::new(move |t| {
            let y = cnn.forward(t, &[vec![1, 2, 3], vec![4, 5, 6, 7, 1]]);
            Ok(project(t, y, 21))
        })
    }));
    out
}

fn layer_case(
    name: &'static str,
    seed: u64,
    build: impl FnOnce(&mut ParamStore, &mut ChaCha8Rng) -> Box<dyn Fn(&mut Tape) -> Result<Var, NumericError>>,
) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut s = ParamStore::new();
    let f = build(&mut s, &mut rng);
    // biases start at zero; move them off zero so every path carries gradient
    let ids: Vec<_> = s.ids().collect();
    for id in ids {
        let noise = uniform(&mut rng, s.get(id).nrows(), s.get(id).ncols());
        *s.get_mut(id) += &(noise * 0.5);
    }
    (name, s, f)
}

/// Runs [`grad_check`] over every differentiable operation.
pub fn op_suite(seed: u64, eps: f64) -> Result<Vec<(&'static str, GradCheck)>, NumericError> {
    cases(seed)
        .into_iter()
        .map(|(name, mut store, f)| Ok((name, grad_check(&mut store, eps, f)?)))
        .collect()
}
