//! Reverse-mode automatic differentiation over small dense `f64` tensors.
//!
//! Operations are recorded on a [`Tape`]; [`Tape::backward`] sweeps it once in
//! reverse and accumulates gradients into the [`ParamStore`].

mod gradcheck;
mod tape;
mod tensor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gradcheck::{finite_difference_check, FiniteDifference, GradCheckReport, ParamError};
pub use tape::{Adjoints, Fault, OpKind, Tape, Var};
pub use tensor::{sigmoid, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("index {id} outside vocabulary of size {vocab}")]
    IndexOutOfVocab { id: usize, vocab: usize },
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalarLoss(Vec<usize>),
    #[error("expected a square matrix, got shape {0:?}")]
    NotSquare(Vec<usize>),
    #[error("gradient reversal coefficient must be >= 0, got {0}")]
    NegativeLambda(f64),
    #[error("surrogate steepness must be > 0, got {0}")]
    BadSteepness(f64),
    #[error("{0}: no operands")]
    Empty(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Owns every trainable tensor of a model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// `value -= lr * grad` for each listed parameter.
    pub fn sgd_step(&mut self, ids: &[ParamId], lr: f64) {
        for &id in ids {
            let p = &mut self.params[id.0];
            for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                *v -= lr * g;
            }
        }
    }
}
