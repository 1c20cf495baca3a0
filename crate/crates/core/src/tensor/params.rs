use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Ordered collection of named trainable tensors. Names are stable layer
/// paths such as `res0.conv1.weight`.
#[derive(Debug, Clone)]
pub struct ParamSet<T: Scalar> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&self) {
        self.tensors.iter().for_each(Tensor::zero_grad);
    }

    /// Replaces the value of `name`, keeping it trainable.
    pub fn set(&mut self, name: &str, shape: &[usize], data: Vec<T>) -> Result<()> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))?;
        if self.tensors[i].shape() != shape {
            return Err(Error::shape("ParamSet::set", self.tensors[i].shape(), shape));
        }
        self.tensors[i] = Tensor::param(shape, data)?;
        Ok(())
    }
}
