//! Dense f64 tensors with a reverse-mode automatic differentiation tape.
//!
//! Every operation records its output on a [`Tape`] together with a closure
//! implementing the backward rule. [`Tensor`] values are cheap handles
//! (tape pointer + node index) and are immutable once produced, so they can
//! be shared freely within the owning thread; the tape itself is confined
//! to one thread (`Rc<RefCell<_>>`, deliberately not `Send`).
//!
//! Calling [`Tensor::backward`] on a scalar walks the tape once, in reverse
//! recording order, accumulating gradients additively — a tensor consumed
//! by several downstream ops receives the sum of their contributions.

use std::cell::RefCell;
use std::rc::Rc;

use crate::{Error, Result};

mod check;
mod ops;

pub use check::gradient_check;

/// Storage of one tape node: a shape and row-major f64 data.
pub(crate) struct Value {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Value {
    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Backward rule: `(values, grad_of_output, grads)`; the closure accumulates
/// into the gradient buffers of the node's inputs.
type BackwardFn = Box<dyn Fn(&[Value], &[f64], &mut [Option<Vec<f64>>])>;

/// Lazily allocates and returns the gradient buffer of node `idx`.
pub(crate) fn accum(grads: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut [f64] {
    grads[idx].get_or_insert_with(|| vec![0.0; len]).as_mut_slice()
}

#[derive(Default)]
struct TapeInner {
    values: Vec<Value>,
    requires: Vec<bool>,
    backs: Vec<Option<BackwardFn>>,
    grads: Vec<Option<Vec<f64>>>,
}

impl TapeInner {
    fn push(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        requires: bool,
        back: Option<BackwardFn>,
    ) -> usize {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let idx = self.values.len();
        self.values.push(Value { shape, data });
        self.requires.push(requires);
        self.backs.push(back);
        self.grads.push(None);
        idx
    }

    fn backward(&mut self, root: usize) -> Result<()> {
        if self.values[root].numel() != 1 {
            return Err(Error::invalid(
                "backward",
                format!(
                    "loss must be a scalar, got shape {:?}",
                    self.values[root].shape
                ),
            ));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[root] = Some(vec![1.0]);
        let TapeInner {
            values,
            backs,
            grads,
            ..
        } = self;
        // Nodes were pushed in topological order, so one reverse sweep
        // visits each exactly once with its output gradient complete.
        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            if let Some(back) = backs[i].as_ref() {
                back(values, &g, grads);
            }
            grads[i] = Some(g);
        }
        Ok(())
    }
}

/// The recording tape. Cloning produces another handle to the same tape.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    pub(crate) fn push_node(
        &self,
        shape: Vec<usize>,
        data: Vec<f64>,
        requires: bool,
        back: Option<BackwardFn>,
    ) -> Tensor {
        let idx = self.inner.borrow_mut().push(shape, data, requires, back);
        Tensor {
            tape: self.clone(),
            idx,
        }
    }

    /// A differentiable leaf. `data.len()` must equal `product(shape)`.
    pub fn leaf(&self, data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::invalid(
                "leaf",
                format!("data length {} does not match shape {:?}", data.len(), shape),
            ));
        }
        Ok(self.push_node(shape.to_vec(), data, requires_grad, None))
    }

    /// A non-differentiable constant.
    pub fn constant(&self, data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        self.leaf(data, shape, false)
    }

    pub fn scalar(&self, v: f64) -> Tensor {
        self.push_node(vec![1], vec![v], false, None)
    }

    pub fn zeros(&self, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        self.push_node(shape.to_vec(), vec![0.0; n], false, None)
    }

    pub fn ones(&self, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        self.push_node(shape.to_vec(), vec![1.0; n], false, None)
    }

    pub fn eye(&self, n: usize) -> Tensor {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        self.push_node(vec![n, n], data, false, None)
    }
}

/// Handle to one tape node.
#[derive(Clone)]
pub struct Tensor {
    tape: Tape,
    idx: usize,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

impl Tensor {
    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().values[self.idx].shape.clone()
    }

    pub fn rank(&self) -> usize {
        self.tape.inner.borrow().values[self.idx].shape.len()
    }

    pub fn numel(&self) -> usize {
        self.tape.inner.borrow().values[self.idx].numel()
    }

    /// Copies the value out of the tape.
    pub fn data(&self) -> Vec<f64> {
        self.tape.inner.borrow().values[self.idx].data.clone()
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> f64 {
        let inner = self.tape.inner.borrow();
        let v = &inner.values[self.idx];
        assert_eq!(v.numel(), 1, "item() requires a scalar, got {:?}", v.shape);
        v.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().requires[self.idx]
    }

    /// Gradient populated by the last [`Tensor::backward`] call, if any.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.tape.inner.borrow().grads[self.idx].clone()
    }

    /// Runs the reverse sweep from this scalar.
    pub fn backward(&self) -> Result<()> {
        self.tape.inner.borrow_mut().backward(self.idx)
    }

    pub(crate) fn check_same_tape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.tape.same_tape(&other.tape) {
            Ok(())
        } else {
            Err(Error::invalid(op, "operands belong to different tapes"))
        }
    }
}
