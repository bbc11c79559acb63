//! Named parameter storage and initializers.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::NumericError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Every learned matrix of a model, addressed by id or by name path.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Arc<Array2<f64>>>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics on a duplicate name, which is a model
    /// construction bug.
    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let name = name.into();
        let id = ParamId(self.values.len());
        assert!(
            self.index.insert(name.clone(), id).is_none(),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(Arc::new(value));
        id
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    /// Copies the matrix first if a tape still holds it.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn shared(&self, id: ParamId) -> Arc<Array2<f64>> {
        self.values[id.0].clone()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    /// Number of parameter matrices.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Ids in name order.
    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.index.values().copied()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn to_tensors(&self) -> BTreeMap<String, Array2<f64>> {
        self.index
            .iter()
            .map(|(name, id)| (name.clone(), (*self.values[id.0]).clone()))
            .collect()
    }

    /// Overwrites every parameter from `tensors`. Names and shapes must match
    /// exactly.
    pub fn load_tensors(&mut self, tensors: &BTreeMap<String, Array2<f64>>) -> Result<(), NumericError> {
        for name in tensors.keys() {
            if !self.index.contains_key(name) {
                return Err(NumericError::UnknownParameter(name.clone()));
            }
        }
        for (name, id) in &self.index {
            let t = tensors
                .get(name)
                .ok_or_else(|| NumericError::MissingParameter(name.clone()))?;
            let v = Arc::make_mut(&mut self.values[id.0]);
            if t.dim() != v.dim() {
                return Err(NumericError::Shape(format!(
                    "parameter {name}: stored {:?}, model {:?}",
                    t.dim(),
                    v.dim()
                )));
            }
            v.assign(t);
        }
        Ok(())
    }
}

/// Uniform Xavier initialization for a `rows x cols` weight.
pub fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a);
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

/// Embedding table with entries drawn from N(0, 1/sqrt(dim)).
pub fn embedding(rows: usize, dim: usize, rng: &mut impl Rng) -> Array2<f64> {
    let dist = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("positive std");
    Array2::from_shape_simple_fn((rows, dim), || dist.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        s.add("emb", embedding(10, 4, &mut rng));
        assert_eq!(s.count(), 40);
        s.add("w", Array2::zeros((2, 2)));
        assert_eq!(s.count(), 44);
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn xavier_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = xavier(30, 20, &mut rng);
        let a = (6.0f64 / 50.0).sqrt();
        assert!(w.iter().all(|x| x.abs() <= a));
    }

    #[test]
    fn load_checks_names_and_shapes() {
        let mut s = ParamStore::new();
        s.add("a", Array2::zeros((2, 3)));
        let mut t = BTreeMap::new();
        t.insert("a".to_string(), Array2::ones((3, 2)));
        assert!(matches!(s.load_tensors(&t), Err(NumericError::Shape(_))));
        t.insert("a".to_string(), Array2::ones((2, 3)));
        s.load_tensors(&t).unwrap();
        assert_eq!(s.get(ParamId(0))[[1, 2]], 1.0);
        t.insert("b".to_string(), Array2::ones((1, 1)));
        assert!(matches!(s.load_tensors(&t), Err(NumericError::UnknownParameter(_))));
    }
}
