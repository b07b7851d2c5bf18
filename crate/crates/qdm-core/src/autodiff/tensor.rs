//! Dense f64 tensor value type.

use serde::{Deserialize, Serialize};

/// Dense n-dimensional array, row-major, 64-bit floats.
///
/// `requires_grad` marks parameter tensors: when inserted into a
/// [`Tape`](super::Tape) they become gradient targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

impl Tensor {
    /// New tensor. Panics if `shape` does not describe `data` exactly.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor shape {:?} does not match buffer length {}",
            shape,
            data.len()
        );
        assert!(shape.iter().all(|&d| d > 0), "tensor dimensions must be positive");
        Tensor { shape, data, requires_grad: false }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor::new(vec![1], vec![x])
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    /// Same tensor flagged as a gradient target.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Scalar value. Panics on non-scalar tensors.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Row `r` of a rank-2 tensor as a fresh vector tensor.
    pub fn row(&self, r: usize) -> Tensor {
        assert_eq!(self.shape.len(), 2, "row() on tensor of shape {:?}", self.shape);
        let cols = self.shape[1];
        Tensor::vector(self.data[r * cols..(r + 1) * cols].to_vec())
    }

    pub fn iter_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
