use dualamr_numeric::{Array2, MultiHeadAttention, ParamStore, Tape};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn rows_sum_to_one_and_masked_weights_vanish(seed in any::<u64>(), rows in 1usize..5, keys in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut s, "att", 8, 4, &mut rng);
        let mut mask = Array2::from_shape_simple_fn((rows, keys), || rng.gen_bool(0.6));
        for mut r in mask.rows_mut() {
            let j = rng.gen_range(0..keys);
            r[j] = true;
        }
        let mut t = Tape::new(&s);
        let q = t.constant(Array2::from_shape_simple_fn((rows, 8), || rng.gen_range(-3.0..3.0)));
        let m = t.constant(Array2::from_shape_simple_fn((keys, 8), || rng.gen_range(-3.0..3.0)));
        let out = mha.forward(&mut t, q, m, Some(&mask)).unwrap();
        prop_assert_eq!(out.weights.len(), 4);
        for w in out.weights {
            let w = t.value(w);
            for (row, allowed) in w.rows().into_iter().zip(mask.rows()) {
                prop_assert!((row.sum() - 1.0).abs() <= 1e-6);
                for (&x, &ok) in row.iter().zip(allowed) {
                    if !ok {
                        prop_assert_eq!(x, 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn two_heads_three_keys_by_hand() {
    // identity projections, zero biases: head h sees columns 2h..2h+2
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut s = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut s, "att", 4, 2, &mut rng);
    for l in [&mha.q, &mha.k, &mha.v, &mha.o] {
        *s.get_mut(l.w) = Array2::eye(4);
        s.get_mut(l.b.unwrap()).fill(0.0);
    }
    let mut t = Tape::new(&s);
    let q = t.constant(ndarray::array![[1.0, 0.0, 0.0, 2.0]]);
    let k = t.constant(ndarray::array![
        [1.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 1.0],
        [2.0, 0.0, 0.0, -1.0]
    ]);
    let out = mha.forward(&mut t, q, k, None).unwrap();
    let soft = |z: [f64; 3]| {
        let e = z.map(|x| (x / 2f64.sqrt()).exp());
        let n: f64 = e.iter().sum();
        e.map(|x| x / n)
    };
    // head 0: q=(1,0) against (1,1), (0,0), (2,0); head 1: q=(0,2) against (0,0), (1,1), (0,-1)
    let w0 = soft([1.0, 0.0, 2.0]);
    let w1 = soft([0.0, 2.0, -2.0]);
    for (got, want) in [(out.weights[0], w0), (out.weights[1], w1)] {
        for j in 0..3 {
            assert!((t.value(got)[[0, j]] - want[j]).abs() < 1e-12);
        }
    }
    let ctx = t.value(out.context);
    let expect = [
        w0[0] * 1.0 + w0[2] * 2.0,
        w0[0] * 1.0,
        w1[1] * 1.0,
        w1[1] * 1.0 - w1[2],
    ];
    for j in 0..4 {
        assert!((ctx[[0, j]] - expect[j]).abs() < 1e-12);
    }
}
