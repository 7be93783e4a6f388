//! Dense 4-D float tensors with reverse-mode differentiation.
//!
//! Values are 32-bit floats in row-major (batch, channel, height, width)
//! order; reductions and convolutions accumulate in 64-bit. Each operation
//! records a graph node so that `backward` on a scalar loss can accumulate
//! gradients into every reachable tensor with `requires_grad` set. Graphs
//! are acyclic by construction; one backward pass at a time per graph.

mod conv;
mod ops;

pub use ops::logsumexp;

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Extents of a dense 4-D array: (batch, channel, height, width).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape {
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(b: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { b, c, h, w }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub fn numel(&self) -> usize {
        self.b * self.c * self.h * self.w
    }

    /// Elements per batch item.
    pub fn per_image(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.b, self.c, self.h, self.w)
    }
}

impl From<(usize, usize, usize, usize)> for Shape {
    fn from(t: (usize, usize, usize, usize)) -> Self {
        Shape::new(t.0, t.1, t.2, t.3)
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Operator tag plus the input references and saved activations its
/// backward rule consumes.
pub(crate) enum Op {
    Leaf,
    Relu(Tensor),
    Sigmoid(Tensor),
    Abs(Tensor),
    Square(Tensor),
    Exp(Tensor),
    Log(Tensor),
    Clamp(Tensor, f32, f32),
    Scale(Tensor, f32),
    AddScalar(Tensor),
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Sum(Tensor),
    Mean(Tensor),
    ChannelSum(Tensor),
    RecipSqrtEps(Tensor, f32),
    ConcatChannels(Tensor, Tensor),
    SliceChannels(Tensor, usize),
    Conv2d {
        input: Tensor,
        kernel: Tensor,
        bias: Tensor,
        padding: usize,
    },
    FixedSum {
        input: Tensor,
        k: f32,
    },
}

impl Op {
    fn inputs(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Abs(a)
            | Op::Square(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Clamp(a, _, _)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::ChannelSum(a)
            | Op::RecipSqrtEps(a, _)
            | Op::SliceChannels(a, _)
            | Op::FixedSum { input: a, .. } => vec![a],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::ConcatChannels(a, b) => {
                vec![a, b]
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                ..
            } => vec![input, kernel, bias],
        }
    }
}

struct Inner {
    id: u64,
    shape: Shape,
    /// Mutated only through `set_values` on leaves (parameter updates);
    /// operation outputs are immutable.
    values: RefCell<Vec<f32>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f32>>>,
    op: Op,
}

/// A dense (batch, channel, height, width) array of `f32` participating in
/// a differentiable computation graph. Cloning is cheap (shared handle).
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={}, requires_grad={})",
            self.inner.id, self.inner.shape, self.inner.requires_grad
        )
    }
}

impl Tensor {
    pub(crate) fn make(shape: Shape, values: Vec<f32>, requires_grad: bool, op: Op) -> Tensor {
        debug_assert_eq!(values.len(), shape.numel());
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                values: RefCell::new(values),
                requires_grad,
                grad: RefCell::new(None),
                op,
            }),
        }
    }

    /// Leaf tensor from a flat row-major buffer.
    pub fn from_vec(shape: impl Into<Shape>, values: Vec<f32>) -> Result<Tensor> {
        let shape = shape.into();
        if values.len() != shape.numel() {
            return Err(Error::shape(
                "from_vec",
                format!(
                    "buffer length {} does not match shape {} ({} elements)",
                    values.len(),
                    shape,
                    shape.numel()
                ),
            ));
        }
        Ok(Tensor::make(shape, values, false, Op::Leaf))
    }

    /// Leaf tensor that accumulates gradients (a trainable parameter).
    pub fn param(shape: impl Into<Shape>, values: Vec<f32>) -> Result<Tensor> {
        let t = Tensor::from_vec(shape, values)?;
        Ok(Tensor {
            inner: Rc::new(Inner {
                id: t.inner.id,
                shape: t.inner.shape,
                values: RefCell::new(t.to_vec()),
                requires_grad: true,
                grad: RefCell::new(None),
                op: Op::Leaf,
            }),
        })
    }

    pub(crate) fn make_leaf(shape: Shape, values: Vec<f32>) -> Tensor {
        Tensor::make(shape, values, false, Op::Leaf)
    }

    pub fn zeros(shape: impl Into<Shape>) -> Tensor {
        let shape = shape.into();
        Tensor::make(shape, vec![0.0; shape.numel()], false, Op::Leaf)
    }

    pub fn ones(shape: impl Into<Shape>) -> Tensor {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: impl Into<Shape>, value: f32) -> Tensor {
        let shape = shape.into();
        Tensor::make(shape, vec![value; shape.numel()], false, Op::Leaf)
    }

    pub fn scalar(value: f32) -> Tensor {
        Tensor::make(Shape::scalar(), vec![value], false, Op::Leaf)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> Shape {
        self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.inner.op, Op::Leaf)
    }

    /// Borrow the value buffer.
    pub fn values(&self) -> Ref<'_, [f32]> {
        Ref::map(self.inner.values.borrow(), |v| v.as_slice())
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.inner.values.borrow().clone()
    }

    /// The single element of a scalar tensor.
    pub fn scalar_value(&self) -> f32 {
        debug_assert!(self.inner.shape.is_scalar());
        self.inner.values.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Overwrite the values of a leaf tensor (optimizer parameter update).
    pub fn set_values(&self, values: &[f32]) -> Result<()> {
        if !self.is_leaf() {
            return Err(Error::InvalidArgument(
                "set_values: only leaf tensors may be overwritten".into(),
            ));
        }
        if values.len() != self.numel() {
            return Err(Error::shape(
                "set_values",
                format!(
                    "buffer length {} does not match shape {}",
                    values.len(),
                    self.inner.shape
                ),
            ));
        }
        self.inner.values.borrow_mut().copy_from_slice(values);
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.inner.values.borrow().iter().all(|v| v.is_finite())
    }

    /// Same values, cut off from the graph; gradient never flows past it.
    pub fn detach(&self) -> Tensor {
        Tensor::make(self.inner.shape, self.to_vec(), false, Op::Leaf)
    }

    /// Reverse-mode pass from a scalar loss. Gradients are accumulated
    /// (not overwritten) into every reachable tensor with
    /// `requires_grad = true`; call `zero_grad` between passes.
    pub fn backward(&self) -> Result<()> {
        if !self.inner.shape.is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got shape {}", self.inner.shape),
            ));
        }
        if !self.inner.requires_grad {
            return Err(Error::InvalidArgument(
                "backward: loss is not connected to any tensor with requires_grad".into(),
            ));
        }

        // Post-order DFS over the grad-requiring subgraph.
        let order = self.topo_order();

        // Gradients for this pass live in a local map so that repeated
        // backward calls each contribute exactly one copy (accumulation,
        // not re-propagation of persisted gradients).
        let mut pass: std::collections::HashMap<u64, Vec<f32>> = std::collections::HashMap::new();
        pass.insert(self.inner.id, vec![1.0]);
        for node in order.iter().rev() {
            let grad = match pass.remove(&node.inner.id) {
                Some(g) => g,
                None => continue,
            };
            ops::backward_rule(&node.inner.op, node, &grad, &mut pass);
            node.accumulate_grad(&grad);
        }
        Ok(())
    }

    fn topo_order(&self) -> Vec<Tensor> {
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        // Iterative post-order: (node, expanded?)
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.inner.id) {
                continue;
            }
            stack.push((node.clone(), true));
            for input in node.inner.op.inputs() {
                if input.inner.requires_grad && !visited.contains(&input.inner.id) {
                    stack.push((input.clone(), false));
                }
            }
        }
        order
    }

    pub(crate) fn accumulate_grad(&self, delta: &[f32]) {
        debug_assert_eq!(delta.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }
}
