//! Named learnable parameters and their gradient accumulators.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Parameter<S: Scalar> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
}

/// Flat registry of parameters, addressed by `ParamId`.
///
/// Registration order is the serialization order, so identical construction
/// code yields byte-identical checkpoints.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S: Scalar> {
    params: Vec<Parameter<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        let grad = Tensor::zeros(value.shape().to_vec());
        self.params.push(Parameter { name, value, grad });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0].grad
    }

    pub fn get(&self, id: ParamId) -> &Parameter<S> {
        &self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<S>> {
        self.params.iter()
    }

    pub fn reset_gradients(&mut self) {
        for p in &mut self.params {
            p.grad.fill(S::zero());
        }
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<S>) -> Result<()> {
        if value.shape() != self.params[id.0].value.shape() {
            return Err(Error::InvalidArgument(format!(
                "parameter {}: shape {:?} cannot replace {:?}",
                self.params[id.0].name,
                value.shape(),
                self.params[id.0].value.shape()
            )));
        }
        self.params[id.0].value = value;
        Ok(())
    }
}

/// Uniform(-a, a) matrix with a = sqrt(6 / (fan_in + fan_out)).
///
/// Draws are made in f64 and converted, so f32 and f64 models see the same
/// underlying random stream.
pub fn glorot_matrix<S: Scalar>(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor<S> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| S::of_f64(rng.gen_range(-a..a)))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("consistent shape")
}

/// Zero-initialized 1×n bias row.
pub fn zero_bias<S: Scalar>(cols: usize) -> Tensor<S> {
    Tensor::zeros(vec![1, cols])
}
