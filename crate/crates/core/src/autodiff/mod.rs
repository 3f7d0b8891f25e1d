//! Define-by-run reverse-mode autodiff on a flat tape.
//!
//! A [`Tape`] is rebuilt for every forward pass: each op eagerly computes its output,
//! records its inputs, and returns a [`TensorId`]. [`Tape::backward`] walks the ops in
//! reverse creation order (which is already a topological order) and accumulates
//! gradients into every `requires_grad` leaf reachable from the loss. Tapes are
//! single-use: a second `backward` without a new tape is a contract error.

mod adamax;
mod ops;
#[cfg(test)]
mod tests;

pub use adamax::Adamax;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a specific [`Tape`]. Ids from one tape must not be used on another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// One tape node: value buffer, shape, and (after `backward`) the gradient.
#[derive(Debug)]
pub struct Tensor<T: Scalar> {
    pub data: Vec<T>,
    pub shape: Vec<usize>,
    pub requires_grad: bool,
    pub grad: Option<Vec<T>>,
}

#[derive(Debug)]
pub(crate) enum Op<T: Scalar> {
    Leaf,
    MatMul { a: TensorId, b: TensorId },
    Transpose { x: TensorId },
    Add { a: TensorId, b: TensorId },
    AddBias { x: TensorId, bias: TensorId },
    Mul { a: TensorId, b: TensorId },
    Scale { x: TensorId, c: T },
    Sum { x: TensorId },
    MeanRows { x: TensorId },
    Softmax { x: TensorId, axis: usize },
    LayerNorm { x: TensorId, gamma: TensorId, beta: TensorId, eps: T },
    Gelu { x: TensorId },
    Sigmoid { x: TensorId },
    GatherRows { x: TensorId, idx: Vec<usize> },
    ConcatRows { parts: Vec<TensorId> },
    ConcatCols { parts: Vec<TensorId> },
    Reshape { x: TensorId },
    BceLoss { yhat: TensorId, labels: Vec<T> },
    MseLoss { pred: TensorId, target: TensorId },
}

impl<T: Scalar> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Transpose { .. } => "transpose",
            Op::Add { .. } => "add",
            Op::AddBias { .. } => "add_bias",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Sum { .. } => "sum",
            Op::MeanRows { .. } => "mean_rows",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu { .. } => "gelu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::GatherRows { .. } => "gather_rows",
            Op::ConcatRows { .. } => "concat_rows",
            Op::ConcatCols { .. } => "concat_cols",
            Op::Reshape { .. } => "reshape",
            Op::BceLoss { .. } => "bce_loss",
            Op::MseLoss { .. } => "mse_loss",
        }
    }
}

struct Node<T: Scalar> {
    tensor: Tensor<T>,
    op: Op<T>,
    /// True when a gradient must flow through this node (leaf with requires_grad,
    /// or any input needs grad). Nodes with `false` are skipped in backward.
    needs_grad: bool,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf: participates in backward.
    pub fn leaf(&mut self, data: Vec<T>, shape: &[usize]) -> Result<TensorId> {
        self.push_leaf(data, shape, true)
    }

    /// Non-trainable leaf: inputs, labels, frozen parameters.
    pub fn constant(&mut self, data: Vec<T>, shape: &[usize]) -> Result<TensorId> {
        self.push_leaf(data, shape, false)
    }

    fn push_leaf(&mut self, data: Vec<T>, shape: &[usize], requires_grad: bool) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.is_empty() {
            return Err(Error::Shape(format!(
                "leaf data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        self.push(data, shape.to_vec(), Op::Leaf, requires_grad)
    }

    fn push(&mut self, data: Vec<T>, shape: Vec<usize>, op: Op<T>, needs_grad: bool) -> Result<TensorId> {
        #[cfg(debug_assertions)]
        {
            if let Some(v) = data.iter().find(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite value {v:?} produced by op `{}`",
                    op.name()
                )));
            }
        }
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            tensor: Tensor { data, shape, requires_grad: needs_grad, grad: None },
            op,
            needs_grad,
        });
        Ok(id)
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor<T> {
        &self.nodes[id.0].tensor
    }

    pub fn value(&self, id: TensorId) -> &[T] {
        &self.nodes[id.0].tensor.data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].tensor.shape
    }

    /// Gradient of `id`, present only after `backward` and only on needs-grad nodes.
    pub fn grad(&self, id: TensorId) -> Option<&[T]> {
        self.nodes[id.0].tensor.grad.as_deref()
    }

    pub fn scalar_value(&self, id: TensorId) -> T {
        self.nodes[id.0].tensor.data[0]
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Rows/cols of a rank-2 node; rank-1 `[n]` is treated as one row.
    fn dims2(&self, id: TensorId) -> Result<(usize, usize)> {
        let s = self.shape(id);
        match s.len() {
            1 => Ok((1, s[0])),
            2 => Ok((s[0], s[1])),
            _ => Err(Error::Shape(format!("expected rank 1 or 2 tensor, got shape {s:?}"))),
        }
    }

    /// Reverse sweep from a scalar root. Populates `grad` on every needs-grad node
    /// reachable from `root`. The tape is consumed for differentiation purposes:
    /// calling `backward` twice is a contract error.
    pub fn backward(&mut self, root: TensorId) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract(
                "backward already ran on this tape; build a fresh tape per forward pass".into(),
            ));
        }
        let root_numel = self.nodes[root.0].tensor.data.len();
        if root_numel != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        self.backward_done = true;
        if !self.nodes[root.0].needs_grad {
            return Ok(()); // nothing trainable feeds the root
        }
        self.nodes[root.0].tensor.grad = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad || self.nodes[i].tensor.grad.is_none() {
                continue;
            }
            self.backprop_node(i);
        }
        Ok(())
    }

    fn grad_buf(&mut self, id: TensorId) -> &mut Vec<T> {
        let n = self.nodes[id.0].tensor.data.len();
        self.nodes[id.0].tensor.grad.get_or_insert_with(|| vec![T::zero(); n])
    }

    fn add_grad(&mut self, id: TensorId, g: &[T]) {
        if !self.needs(id) {
            return;
        }
        let buf = self.grad_buf(id);
        for (o, v) in buf.iter_mut().zip(g) {
            *o = *o + *v;
        }
    }
}

/// Relative-error comparison used across gradient tests:
/// `|a-b| <= atol + rtol * max(|a|, |b|)`.
pub fn close(a: f64, b: f64, rtol: f64, atol: f64) -> bool {
    (a - b).abs() <= atol + rtol * a.abs().max(b.abs())
}
