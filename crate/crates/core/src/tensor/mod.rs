//! Dense tensors, the reverse-mode graph over the model's fixed operation
//! set, the Adam optimizer, finite-difference gradient checking and the
//! parameter checkpoint format.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
mod kernels;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Contiguous row-major array with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
    requires_grad: bool,
    grad: Option<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<S>) -> Result<Self> {
        let shape = shape.into();
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("holds {} elements, buffer has {}", count, data.len()),
            });
        }
        Ok(Self { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: S) -> Self {
        let shape = shape.into();
        let count = shape.iter().product();
        Self { shape, data: vec![value; count], requires_grad: false, grad: None }
    }

    pub fn scalar(value: S) -> Self {
        Self { shape: vec![], data: vec![value], requires_grad: false, grad: None }
    }

    pub fn from_f64(shape: impl Into<Vec<usize>>, values: &[f64]) -> Result<Self> {
        Self::new(shape, values.iter().map(|&v| S::from_f64_lossy(v)).collect())
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<S>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::shape(
                "set_grad",
                format!("gradient has {} elements, tensor {}", grad.len(), self.data.len()),
            ));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// First element; the value of a scalar tensor.
    pub fn item(&self) -> S {
        self.data[0]
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let count: usize = shape.iter().product();
        if count != self.data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("cannot hold {} elements", self.data.len()),
            });
        }
        self.shape = shape;
        if let Some(g) = &self.grad {
            debug_assert_eq!(g.len(), count);
        }
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| T::from_f64_lossy(v.to_f64_lossless())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    /// Unpacks a rank-4 shape as `(n, c, h, w)`.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(op, format!("expected rank-4 tensor, got {:?}", self.shape))),
        }
    }

    /// Copies channels `start..start + len` of an `[N, C, H, W]` tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self> {
        let (n, c, h, w) = self.dims4("slice_channels")?;
        if start + len > c {
            return Err(Error::shape(
                "slice_channels",
                format!("range {}..{} exceeds {} channels", start, start + len, c),
            ));
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            let base = (b * c + start) * plane;
            out.extend_from_slice(&self.data[base..base + len * plane]);
        }
        Self::new(vec![n, len, h, w], out)
    }
}
