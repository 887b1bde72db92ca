//! A minimal reverse-mode differentiation engine.
//!
//! Values live in dense row-major [`Tensor`]s. Learnable tensors are held in
//! a [`ParamStore`]; a [`Tape`] records one forward pass over them and
//! [`Tape::backward`] returns a [`Grads`] with one gradient per parameter.
//! Tapes never mutate the store, so several tapes may borrow one store at
//! the same time.

mod adam;
mod checkpoint;
mod gradcheck;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use tape::{Tape, Var, OPERATORS};

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GradError {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalar(Vec<usize>),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("gradients cover {got} parameters, store has {expected}")]
    MissingGrads { expected: usize, got: usize },
    #[error("duplicate parameter name {0}")]
    DuplicateName(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> GradError {
    GradError::Shape {
        op,
        detail: detail.into(),
    }
}

/// Dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    data: Vec<f64>,
    shape: Vec<usize>,
}

impl Tensor {
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Result<Self, GradError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(
                "tensor",
                format!("shape {shape:?} holds {n} values, got {}", data.len()),
            ));
        }
        Ok(Self { data, shape })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            data: vec![0.0; shape.iter().product()],
            shape: shape.to_vec(),
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            data: vec![v],
            shape: vec![1, 1],
        }
    }

    /// Two-dimensional tensor from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, GradError> {
        Self::new(data, vec![rows, cols])
    }

    pub fn row(data: Vec<f64>) -> Self {
        let n = data.len();
        Self {
            data,
            shape: vec![1, n],
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// `(rows, cols)` of a 2-D tensor.
    pub fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Some((r, c)),
            _ => None,
        }
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a non-scalar tensor");
        self.data[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId, GradError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(GradError::DuplicateName(name));
        }
        let id = self.values.len();
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(id))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, t)| (ParamId(i), self.names[i].as_str(), t))
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }
}

/// One gradient tensor per parameter of a store; parameters that did not
/// take part in the loss keep zero gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    grads: Vec<Tensor>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store.values.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub(crate) fn add_into(&mut self, id: ParamId, g: &[f64]) {
        self.grads[id.0].data.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }

    /// `self += weight · other`.
    pub fn accumulate(&mut self, other: &Grads, weight: f64) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += weight * y);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}
