//! Dense-tensor engine with reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of one forward pass in execution order;
//! [`Tape::backward`] replays the records in reverse and accumulates gradients
//! in a fixed index order, so repeated runs from the same seed are bitwise
//! identical. Tapes are single-threaded by construction; independent tapes
//! (one per batch sample) may run on different threads.

mod backward;
mod ops;

pub use backward::Gradients;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Matmul { a: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    AddRow { a: TensorId, row: TensorId },
    MulRow { a: TensorId, row: TensorId },
    MulCol { a: TensorId, col: TensorId },
    AddScalar { a: TensorId },
    MulScalar { a: TensorId, c: f64 },
    Gather { a: TensorId, idx: Arc<Vec<usize>> },
    Concat { a: TensorId, b: TensorId, axis: usize },
    SliceCols { a: TensorId, start: usize },
    Reshape { a: TensorId },
    Softmax { a: TensorId, axis: usize },
    SumAxis { a: TensorId, axis: usize },
    MeanAxis { a: TensorId, axis: usize },
    MaxAxis { a: TensorId, axis: usize },
    SumAll { a: TensorId },
    MeanAll { a: TensorId },
    Gelu { a: TensorId },
    Sigmoid { a: TensorId },
    Tanh { a: TensorId },
    Abs { a: TensorId },
    LayerNorm { a: TensorId, gain: TensorId, bias: TensorId, eps: f64 },
}

#[derive(Debug)]
pub(crate) struct Node<T> {
    pub(crate) value: Arc<Vec<T>>,
    pub(crate) shape: Vec<usize>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Records one forward pass and replays it backward.
#[derive(Debug, Default)]
pub struct Tape<T: Scalar> {
    pub(crate) nodes: Vec<Node<T>>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Decompose a shape around `axis` into (outer, axis length, inner) extents.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn value(&self, id: TensorId) -> &[T] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn check_extents(shape: &[usize], len: usize) -> Result<()> {
        if shape.contains(&0) {
            return Err(Error::contract(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        if numel(shape) != len {
            return Err(Error::contract(format!(
                "shape {shape:?} implies {} elements, buffer has {len}",
                numel(shape)
            )));
        }
        Ok(())
    }

    /// Leaf tensor that does not participate in gradients.
    pub fn constant(&mut self, data: Vec<T>, shape: &[usize]) -> Result<TensorId> {
        Self::check_extents(shape, data.len())?;
        Ok(self.push(Arc::new(data), shape.to_vec(), Op::Leaf, false))
    }

    /// Leaf tensor sharing an existing buffer, typically a model parameter.
    pub fn leaf(
        &mut self,
        data: Arc<Vec<T>>,
        shape: &[usize],
        requires_grad: bool,
    ) -> Result<TensorId> {
        Self::check_extents(shape, data.len())?;
        Ok(self.push(data, shape.to_vec(), Op::Leaf, requires_grad))
    }

    pub fn scalar(&mut self, v: T) -> TensorId {
        self.push(Arc::new(vec![v]), vec![1], Op::Leaf, false)
    }

    pub(crate) fn push(
        &mut self,
        value: Arc<Vec<T>>,
        shape: Vec<usize>,
        op: Op,
        requires_grad: bool,
    ) -> TensorId {
        debug_assert_eq!(numel(&shape), value.len());
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            value,
            shape,
            op,
            requires_grad,
        });
        id
    }

    pub(crate) fn grad_of(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    pub(crate) fn shape_err(&self, op: &'static str, a: TensorId, b: TensorId) -> Error {
        Error::Shape {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }
}
