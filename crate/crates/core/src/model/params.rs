//! Named parameter storage and the SGD update.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Array2<T>>,
    grads: Vec<Array2<T>>,
    velocity: Vec<Array2<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            velocity: Vec::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.grads.push(Array2::zeros(value.dim()));
        self.velocity.push(Array2::zeros(value.dim()));
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Glorot-uniform weight matrix.
    pub fn xavier(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let w = Array2::from_shape_simple_fn((rows, cols), || {
            T::from_f64_lossy(rng.random_range(-bound..bound))
        });
        self.add(name, w)
    }

    pub fn normal(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let w = Array2::from_shape_simple_fn((rows, cols), || {
            let z: f64 = StandardNormal.sample(rng);
            T::from_f64_lossy(std * z)
        });
        self.add(name, w)
    }

    pub fn zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Array2::zeros((rows, cols)))
    }

    pub fn ones(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Array2::ones((rows, cols)))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalars.
    pub fn size(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }

    pub fn value(&self, id: ParamId) -> &Array2<T> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<T> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Array2<T> {
        &self.grads[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn values(&self) -> &[Array2<T>] {
        &self.values
    }

    /// Replaces all values; shapes must match.
    pub fn set_values(&mut self, values: Vec<Array2<T>>) {
        assert_eq!(values.len(), self.values.len());
        for (v, new) in self.values.iter().zip(&values) {
            assert_eq!(v.dim(), new.dim());
        }
        self.values = values;
    }

    pub(crate) fn add_grad(&mut self, id: ParamId, g: &Array2<T>) {
        self.grads[id.0] += g;
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.fill(T::zero());
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|&v| {
                let v = v.as_f64();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales gradients so their global norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let k = T::from_f64_lossy(max_norm / norm);
            for g in &mut self.grads {
                g.mapv_inplace(|v| v * k);
            }
        }
    }

    /// v ← μ·v + g; θ ← θ − lr·v. With μ = 0 this is plain SGD.
    pub fn sgd_step(&mut self, lr: f64, momentum: f64) {
        let lr = T::from_f64_lossy(lr);
        let mu = T::from_f64_lossy(momentum);
        for ((w, g), v) in self
            .values
            .iter_mut()
            .zip(&self.grads)
            .zip(&mut self.velocity)
        {
            if momentum > 0.0 {
                v.zip_mut_with(g, |v, &g| *v = mu * *v + g);
                w.zip_mut_with(v, |w, &v| *w -= lr * v);
            } else {
                w.zip_mut_with(g, |w, &g| *w -= lr * g);
            }
        }
    }

    pub fn reset_momentum(&mut self) {
        for v in &mut self.velocity {
            v.fill(T::zero());
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}
