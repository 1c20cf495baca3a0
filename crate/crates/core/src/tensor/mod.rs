//! Dense row-major tensors with tape-based reverse-mode differentiation.
//!
//! Every op that consumes a tensor with `requires_grad` records a
//! [`TapeNode`] holding its inputs and a backward closure. Node ids grow
//! monotonically, so sorting the reachable nodes by descending id is a
//! valid reverse topological order for [`Tensor::backward`].

mod adam;
pub mod checkpoint;
mod conv;
mod ops;
mod params;

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use adam::{adam_step, AdamConfig, Moments};
pub use conv::{conv2d_output_size, conv_transpose2d_output_size};
pub use params::ParamSet;

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Conv2d,
    ConvTranspose2d,
    InstanceNorm,
    Relu,
    LeakyRelu,
    Tanh,
    Sigmoid,
    Softplus,
    Add,
    Sub,
    Mul,
    Div,
    ScalarMul,
    AddScalar,
    PadReflect,
    Mean,
    Sum,
    Abs,
    Log,
    Sqrt,
    Clamp,
    Concat,
    Slice,
    Reshape,
    /// Op defined outside this module (e.g. soft histograms).
    Custom(&'static str),
}

/// What a backward closure sees: the op inputs, the forward output and the
/// upstream gradient (same length as the output).
pub struct BackwardArgs<'a, T: Scalar> {
    pub inputs: &'a [Tensor<T>],
    pub output: &'a [T],
    pub grad: &'a [T],
}

impl<T: Scalar> BackwardArgs<'_, T> {
    /// Whether input `i` wants a gradient.
    pub fn needs(&self, i: usize) -> bool {
        self.inputs[i].requires_grad()
    }
}

/// Returns one optional gradient per input; `None` for inputs that do not
/// require one.
pub type BackwardFn<T> = Box<dyn Fn(&BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>>>;

pub struct TapeNode<T: Scalar> {
    pub kind: OpKind,
    pub inputs: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Node<T: Scalar> {
    id: usize,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<T>>>,
    tape: Option<TapeNode<T>>,
}

/// Shared handle to an immutable tensor node.
pub struct Tensor<T: Scalar>(Rc<Node<T>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.tape.as_ref().map(|t| t.kind))
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    fn build(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, tape: Option<TapeNode<T>>) -> Self {
        assert_eq!(
            numel(&shape),
            data.len(),
            "tensor data length does not match shape {shape:?}"
        );
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            tape,
        }))
    }

    /// Constant leaf.
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::shape("tensor", shape, &[data.len()]));
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Leaf that accumulates gradients.
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::shape("param", shape, &[data.len()]));
        }
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), vec![T::zero(); numel(shape)], false, None)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::build(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn scalar(value: T) -> Self {
        Self::build(Vec::new(), vec![value], false, None)
    }

    /// Records the result of an op. The tape entry is dropped when no input
    /// requires a gradient.
    pub fn from_op(
        kind: OpKind,
        shape: Vec<usize>,
        data: Vec<T>,
        inputs: Vec<Tensor<T>>,
        backward: impl Fn(&BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>> + 'static,
    ) -> Self {
        let requires_grad = inputs.iter().any(Tensor::requires_grad);
        let tape = requires_grad.then(|| TapeNode {
            kind,
            inputs,
            backward: Box::new(backward),
        });
        Self::build(shape, data, requires_grad, tape)
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn op_kind(&self) -> Option<OpKind> {
        self.0.tape.as_ref().map(|t| t.kind)
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Constant copy cut off from the tape.
    pub fn detach(&self) -> Self {
        Self::build(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    pub fn all_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    /// Accumulates d(self)/d(leaf) into every reachable tensor that requires
    /// a gradient.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Contract("backward root does not require grad".into()));
        }

        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.id()) {
                continue;
            }
            if let Some(tape) = &t.0.tape {
                for inp in &tape.inputs {
                    if inp.requires_grad() && !seen.contains(&inp.id()) {
                        stack.push(inp.clone());
                    }
                }
            }
            order.push(t);
        }
        order.sort_by(|a, b| b.id().cmp(&a.id()));

        let mut pending: HashMap<usize, Vec<T>> = HashMap::new();
        pending.insert(self.id(), vec![T::one()]);
        for node in &order {
            let Some(grad) = pending.remove(&node.id()) else {
                continue;
            };
            if let Some(tape) = &node.0.tape {
                let args = BackwardArgs {
                    inputs: &tape.inputs,
                    output: &node.0.data,
                    grad: &grad,
                };
                let input_grads = (tape.backward)(&args);
                debug_assert_eq!(input_grads.len(), tape.inputs.len());
                for (inp, g) in tape.inputs.iter().zip(input_grads) {
                    let Some(g) = g else { continue };
                    if !inp.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(g.len(), inp.numel(), "{:?} grad length", tape.kind);
                    match pending.get_mut(&inp.id()) {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                        None => {
                            pending.insert(inp.id(), g);
                        }
                    }
                }
            }
            let mut slot = node.0.grad.borrow_mut();
            match slot.as_mut() {
                Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, b)| *a += *b),
                None => *slot = Some(grad),
            }
        }
        Ok(())
    }

    /// Same values and shape, different scalar type. Always a constant leaf.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        let data = self.0.data.iter().map(|v| U::of(v.f64())).collect();
        Tensor::build(self.0.shape.clone(), data, false, None)
    }
}
