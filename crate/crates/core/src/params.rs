//! Named, ordered parameter tensors.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::numgrad::{Tape, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Clone)]
pub struct ParamStore<F> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
}

impl<F: Scalar> std::fmt::Debug for ParamStore<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map()
            .entries(self.names.iter().zip(self.tensors.iter().map(Tensor::shape)))
            .finish()
    }
}

impl<F> Default for ParamStore<F> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor and returns its index.
    pub fn push(&mut self, name: impl Into<String>, t: Tensor<F>) -> usize {
        let name = name.into();
        assert!(self.index_of(&name).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, i: usize) -> &Tensor<F> {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor<F> {
        &mut self.tensors[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<F>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Registers every tensor as a leaf; the returned vars share indices with the store.
    pub fn to_tape(&self, tape: &mut Tape<F>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    pub fn zeros_like(&self) -> Vec<Tensor<F>> {
        self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect()
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Normal(0, std) resampled until within two standard deviations.
pub fn trunc_normal<F: Scalar>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<F> {
    let normal = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= 2.0 * std {
            break F::lit(v);
        }
    })
}

pub fn uniform<F: Scalar>(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<F> {
    Tensor::from_fn(shape, |_| F::lit(rng.random_range(lo..hi)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn trunc_normal_bounds_and_spread() {
        let mut rng = seed::rng(1, &[]);
        let t: Tensor<f64> = trunc_normal(&[100, 100], 0.02, &mut rng);
        assert!(t.data().iter().all(|v| v.abs() <= 0.04));
        let var = t.data().iter().map(|v| v * v).sum::<f64>() / 1e4;
        // truncation at 2 sigma shrinks the std to about 0.88 sigma
        assert!((var.sqrt() - 0.0176).abs() < 0.001, "{}", var.sqrt());
    }

    #[test]
    fn lookup_by_name() {
        let mut s = ParamStore::<f32>::new();
        s.push("a", Tensor::zeros(&[2]));
        s.push("b", Tensor::zeros(&[3, 2]));
        assert_eq!(s.index_of("b"), Some(1));
        assert_eq!(s.num_scalars(), 8);
        assert!(s.by_name("c").is_none());
    }
}
