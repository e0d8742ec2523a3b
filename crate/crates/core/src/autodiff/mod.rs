//! Minimal reverse-mode differentiation: arrays, the tape, Adam, and checkpoints.

mod array;
pub mod checkpoint;
pub mod gradcheck;
mod graph;
mod optim;
mod params;

pub use array::Array;
pub use graph::{Gradients, Graph, Indices, Op, Var};
pub use optim::{adam_step, OptimState};
pub use params::{Binder, Params};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("division by zero")]
    DivisionByZero,
    #[error("logarithm of a non-positive value")]
    NonPositiveLog,
    #[error("gradient seed must be a scalar, got shape {0:?}")]
    NonScalarSeed(Vec<usize>),
    #[error("index {index} out of range {bound} in {op}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("input {0:?} is not declared by the graph")]
    UnknownInput(String),
    #[error("input {0:?} declared twice")]
    DuplicateInput(String),
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("non-finite gradient for {0:?}")]
    NonFiniteGradient(String),
}
