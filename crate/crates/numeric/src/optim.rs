//! Adam with global-norm gradient clipping.

use ndarray::Array2;

use crate::params::{ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// number of updates applied so far
    pub t: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Array2<f64>> = (0..store.len())
            .map(|i| Array2::zeros(store.get(ParamId(i)).dim()))
            .collect();
        Adam {
            beta1,
            beta2,
            eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update. Parameters without a gradient still decay their moments.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Array2<f64>>], lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            match g {
                Some(g) => {
                    m.zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
                    v.zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
                }
                None => {
                    m.mapv_inplace(|m| b1 * m);
                    v.mapv_inplace(|v| b2 * v);
                }
            }
            let p = store.get_mut(ParamId(i));
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= lr * (m / c1) / ((v / c2).sqrt() + self.eps);
            });
        }
    }
}

pub fn global_norm(grads: &[Option<Array2<f64>>]) -> f64 {
    grads
        .iter()
        .flatten()
        .map(|g| g.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Array2<f64>>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let k = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.mapv_inplace(|x| x * k);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = vec![Some(array![[3.0, 4.0]]), None, Some(array![[0.0]])];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
        let mut small = vec![Some(array![[0.3]])];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].as_ref().unwrap()[[0, 0]], 0.3);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut s = ParamStore::new();
        let id = s.add("x", array![[5.0, -3.0]]);
        let mut opt = Adam::new(&s, 0.9, 0.999, 1e-9);
        for _ in 0..2000 {
            let g = s.get(id).mapv(|x| 2.0 * x);
            opt.step(&mut s, &[Some(g)], 0.05);
        }
        assert!(s.get(id).iter().all(|x| x.abs() < 1e-3));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = ParamStore::new();
        s.add("x", array![[1.0]]);
        let mut opt = Adam::new(&s, 0.9, 0.999, 0.0);
        opt.step(&mut s, &[Some(array![[0.37]])], 0.1);
        assert!((s.get(ParamId(0))[[0, 0]] - 0.9).abs() < 1e-12);
    }
}
