//! Dense tensors with define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] is rebuilt for every forward pass. Operations append nodes;
//! [`Graph::backward`] walks them in reverse append order exactly once.

pub mod alloc;
pub mod gradcheck;
mod array;
mod graph;
pub(crate) mod kernels;
mod scalar;

pub use alloc::MemClass;
pub use array::Tensor;
pub use graph::{Gradients, Graph, Var};
pub use scalar::Scalar;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} needs {} elements, got {len}", .shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: invalid argument: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("all-pairs cost volume needs {requested} entries, budget is {budget}")]
    BudgetExceeded { requested: u64, budget: u64 },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}
