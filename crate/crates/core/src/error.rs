//! Error types shared across the crate.

use crate::tensor::Shape;
use thiserror::Error;

/// Errors raised by tensor ops and network assembly.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    /// Two shapes that must agree do not. `what` names the axis or contract
    /// that was violated.
    #[error("{op}: {what}: {lhs} vs {rhs}")]
    DimMismatch {
        op: &'static str,
        what: &'static str,
        lhs: Shape,
        rhs: Shape,
    },
    #[error("{op}: invalid configuration: {msg}")]
    BadConfig { op: &'static str, msg: String },
}

impl TensorError {
    pub fn bad_config(op: &'static str, msg: impl Into<String>) -> Self {
        TensorError::BadConfig {
            op,
            msg: msg.into(),
        }
    }
}

/// Errors raised by the training loop.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    /// A loss went non-finite. `loss` names which of the five scalars,
    /// `tensor` the first non-finite node on the tape and the op that
    /// produced it.
    #[error("non-finite loss {loss}: first bad tensor is node {node} produced by {op}")]
    NonFinite {
        loss: &'static str,
        node: usize,
        op: &'static str,
    },
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),
}
