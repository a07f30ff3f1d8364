use std::fmt;

use super::alloc::{self, MemClass};
use super::{Scalar, TensorError};

/// Dense row-major n-dimensional array.
///
/// A tensor does not know about differentiation; the [`Graph`](super::Graph)
/// owns tensors and hands out [`Var`](super::Var) handles for them.
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
    class: MemClass,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self, TensorError> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self::with_class(shape, data, MemClass::General))
    }

    pub(crate) fn with_class(shape: Vec<usize>, data: Vec<T>, class: MemClass) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        alloc::acquire(bytes_of::<T>(data.len()), class);
        Tensor { shape, data, class }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Self::with_class(shape, vec![T::zero(); n], MemClass::General)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Self::with_class(shape, vec![value; n], MemClass::General)
    }

    pub fn scalar(value: T) -> Self {
        Self::with_class(Vec::new(), vec![value], MemClass::General)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn mem_class(&self) -> MemClass {
        self.class
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn into_vec(mut self) -> Vec<T> {
        alloc::release(bytes_of::<T>(self.data.len()), self.class);
        let data = std::mem::take(&mut self.data);
        self.shape.clear();
        self.data = Vec::new();
        data
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self, TensorError> {
        let shape = shape.into();
        if numel(&shape) != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape,
            });
        }
        Ok(Self::with_class(shape, self.data.clone(), self.class))
    }

    /// Converts between precisions (used to lift f32 models into f64 for
    /// gradient checking).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        let data = self.data.iter().map(|v| U::from_f64(v.as_f64())).collect();
        Tensor::with_class(self.shape.clone(), data, self.class)
    }

    /// Dimensions of a 4-d tensor as `(n, c, h, w)`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize), TensorError> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(TensorError::Rank {
                op: "dims4",
                expected: 4,
                shape: self.shape.clone(),
            }),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

fn bytes_of<T>(n: usize) -> u64 {
    (n * std::mem::size_of::<T>()) as u64
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self::with_class(self.shape.clone(), self.data.clone(), self.class)
    }
}

impl<T: Scalar> Drop for Tensor<T> {
    fn drop(&mut self) {
        alloc::release(bytes_of::<T>(self.data.len()), self.class);
    }
}

impl<T: Scalar> PartialEq for Tensor<T> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("dtype", &T::NAME)
            .field("data", &preview)
            .finish()
    }
}
