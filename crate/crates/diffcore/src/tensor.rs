//! Dense tensors participating in a dynamically recorded differentiation graph.
//!
//! A [`Tensor`] is a cheaply clonable handle onto a node. Leaves are created
//! with [`Tensor::from_vec`] (constants) or [`Tensor::param`] (trainable);
//! every primitive application produces a fresh node that remembers its
//! inputs, so the graph is rebuilt on each forward pass and dropped with the
//! loss value.

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use crate::error::{fmt_shape, DiffError, Result};
use crate::ops::OpKind;
use crate::scalar::Real;

pub(crate) struct Node<F: Real> {
    pub(crate) kind: OpKind,
    pub(crate) inputs: Vec<Tensor<F>>,
}

pub(crate) struct Inner<F: Real> {
    shape: Vec<usize>,
    data: RefCell<Vec<F>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<F>>>,
    pub(crate) node: Option<Node<F>>,
}

/// Dense row-major tensor of `F` values.
pub struct Tensor<F: Real> {
    pub(crate) inner: Rc<Inner<F>>,
}

impl<F: Real> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<F: Real> Tensor<F> {
    fn build(
        shape: Vec<usize>,
        data: Vec<F>,
        requires_grad: bool,
        node: Option<Node<F>>,
    ) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(DiffError::ShapeData {
                shape: fmt_shape(&shape),
                expected,
                got: data.len(),
            });
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(DiffError::InvalidArgument {
                context: "tensor",
                detail: format!("zero extent in shape {}", fmt_shape(&shape)),
            });
        }
        Ok(Tensor {
            inner: Rc::new(Inner {
                shape,
                data: RefCell::new(data),
                requires_grad,
                grad: RefCell::new(None),
                node,
            }),
        })
    }

    /// Constant leaf tensor.
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<F>) -> Result<Self> {
        Self::build(shape.into(), data, false, None)
    }

    /// Trainable leaf tensor; gradients accumulate into it on backward.
    pub fn param(shape: impl Into<Vec<usize>>, data: Vec<F>) -> Result<Self> {
        Self::build(shape.into(), data, true, None)
    }

    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<F>, node: Option<Node<F>>) -> Result<Self> {
        Self::build(shape, data, false, node)
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::build(shape, vec![F::zero(); n], false, None).expect("consistent by construction")
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: F) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::build(shape, vec![value; n], false, None).expect("consistent by construction")
    }

    /// Scalar constant with shape `[1]`.
    pub fn scalar(value: F) -> Self {
        Self::full([1usize], value)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// True when backward must propagate through this tensor.
    pub fn needs_grad(&self) -> bool {
        self.inner.requires_grad || self.inner.node.is_some()
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.node.is_none()
    }

    pub(crate) fn borrow_data(&self) -> Ref<'_, Vec<F>> {
        self.inner.data.borrow()
    }

    /// Copy of the flat row-major data.
    pub fn value(&self) -> Vec<F> {
        self.inner.data.borrow().clone()
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> Result<F> {
        if !self.is_scalar() {
            return Err(DiffError::NonScalarLoss {
                shape: fmt_shape(self.shape()),
            });
        }
        Ok(self.inner.data.borrow()[0])
    }

    /// Overwrite the data of a leaf tensor in place (parameter updates,
    /// finite-difference perturbations). Rejected for graph-produced tensors.
    pub fn set_data(&self, data: &[F]) -> Result<()> {
        if !self.is_leaf() {
            return Err(DiffError::InvalidArgument {
                context: "set_data",
                detail: "only leaf tensors may be mutated".to_string(),
            });
        }
        let mut cur = self.inner.data.borrow_mut();
        if cur.len() != data.len() {
            return Err(DiffError::ShapeData {
                shape: fmt_shape(self.shape()),
                expected: cur.len(),
                got: data.len(),
            });
        }
        cur.copy_from_slice(data);
        Ok(())
    }

    /// Current accumulated gradient, if any backward has reached this tensor.
    pub fn grad(&self) -> Option<Vec<F>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Add `delta` into the accumulated gradient.
    pub fn accumulate_grad(&self, delta: &[F]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi = *gi + *di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    pub(crate) fn ptr_id(&self) -> *const () {
        Rc::as_ptr(&self.inner) as *const ()
    }
}

impl<F: Real> std::fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("data", &self.inner.data.borrow())
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

/// Clear gradients on every tensor in `params`.
pub fn zero_grads<F: Real>(params: &[Tensor<F>]) {
    for p in params {
        p.zero_grad();
    }
}
