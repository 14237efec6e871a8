//! Dense n-dimensional f64 tensors with a gradient slot.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};

pub(crate) struct TensorData {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    pub requires_grad: bool,
}

/// Shared handle to a tensor value. Cloning the handle aliases the same
/// storage; use [`Tensor::detach`] for an independent copy.
///
/// Spatial 5-D tensors are ordered `[batch, channel, depth, height, width]`
/// with the last index fastest (row-major). For reservoir cubes this maps
/// to `[z][y][x]` with x fastest, matching the on-disk array layout.
#[derive(Clone)]
pub struct Tensor(pub(crate) Rc<RefCell<TensorData>>);

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor(Rc::new(RefCell::new(TensorData {
            shape: shape.to_vec(),
            data,
            grad: None,
            requires_grad: false,
        }))))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, vec![0.0; n]).expect("consistent")
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, vec![value; n]).expect("consistent")
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::from_vec(&[], vec![value]).expect("consistent")
    }

    /// Leaf parameter: `requires_grad` set.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::from_vec(shape, data)?;
        t.set_requires_grad(true);
        Ok(t)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.borrow().data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.borrow().requires_grad
    }

    pub fn set_requires_grad(&self, v: bool) {
        self.0.borrow_mut().requires_grad = v;
    }

    /// Copy of the raw data.
    pub fn data(&self) -> Vec<f64> {
        self.0.borrow().data.clone()
    }

    /// Borrow the data without copying.
    pub fn with_data<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.0.borrow().data)
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        let b = self.0.borrow();
        assert_eq!(b.data.len(), 1, "item() on non-scalar tensor");
        b.data[0]
    }

    /// Replace the stored values. Invalidates any live graph that recorded
    /// this tensor's previous values; only call between forward passes.
    pub fn set_data(&self, data: &[f64]) {
        let mut b = self.0.borrow_mut();
        assert_eq!(b.data.len(), data.len(), "set_data length mismatch");
        b.data.copy_from_slice(data);
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.0.borrow_mut().grad = None;
    }

    /// Add `g` into the gradient slot, allocating zeros first if absent.
    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        let mut b = self.0.borrow_mut();
        assert_eq!(b.data.len(), g.len(), "gradient length mismatch");
        match &mut b.grad {
            Some(existing) => {
                for (e, v) in existing.iter_mut().zip(g) {
                    *e += v;
                }
            }
            None => b.grad = Some(g.to_vec()),
        }
    }

    /// Independent copy that does not require gradients.
    pub fn detach(&self) -> Tensor {
        let b = self.0.borrow();
        Tensor::from_vec(&b.shape, b.data.clone()).expect("consistent")
    }

    /// True if two handles alias the same storage.
    pub fn same_storage(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.borrow().data.iter().all(|v| v.is_finite())
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let b = self.0.borrow();
        write!(
            f,
            "Tensor(shape={:?}, requires_grad={}, grad={})",
            b.shape,
            b.requires_grad,
            if b.grad.is_some() { "set" } else { "unset" }
        )
    }
}
