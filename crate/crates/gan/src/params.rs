//! Named parameter storage shared by the networks and the optimizer.

use facies_autodiff::{Float, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Ordered list of named trainable tensors.
#[derive(Clone, Debug)]
pub struct ParamSet<T: Float> {
    names: Vec<String>,
    vars: Vec<Var<T>>,
}

impl<T: Float> Default for ParamSet<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            vars: Vec::new(),
        }
    }
}

impl<T: Float> ParamSet<T> {
    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.vars.push(Var::param(value));
        self.vars.len() - 1
    }

    pub(crate) fn normal(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut impl Rng) -> usize {
        let dist = Normal::new(0.0, std).expect("positive std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::of(dist.sample(rng))).collect();
        self.push(name, Tensor::new(shape, data))
    }

    pub(crate) fn filled(&mut self, name: &str, shape: &[usize], value: f64) -> usize {
        self.push(name, Tensor::full(shape, T::of(value)))
    }

    pub fn var(&self, i: usize) -> &Var<T> {
        &self.vars[i]
    }

    pub fn vars(&self) -> Vec<&Var<T>> {
        self.vars.iter().collect()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.vars.iter().map(Var::value))
    }

    /// Replace the value of parameter `i` with a fresh leaf.
    pub fn set(&mut self, i: usize, value: Tensor<T>) {
        assert_eq!(value.shape(), self.vars[i].shape(), "parameter {} shape", self.names[i]);
        self.vars[i] = Var::param(value);
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.vars.iter().map(|v| v.value().numel()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}
