//! Dense row-major matrices of `f64`.
//!
//! Everything in the engine is rank 2: a batch of samples is `[n, d]`, a bias
//! or a latent row is `[1, d]`, a scalar is `[1, 1]`. Fixing the rank keeps
//! shape checks and the matrix kernels simple.

use crate::error::{Error, Result};
use crate::autodiff::tape::NodeId;

/// A row-major `f64` matrix, optionally tagged with the tape node it came from.
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: [usize; 2],
    data: Vec<f64>,
    pub(crate) node: Option<NodeId>,
}

impl Tensor {
    /// Builds a tensor from a flat row-major buffer.
    pub fn new(shape: [usize; 2], data: Vec<f64>) -> Result<Tensor> {
        if shape[0] * shape[1] != data.len() {
            return Err(Error::Invalid(format!(
                "tensor shape {:?} needs {} values, got {}",
                shape,
                shape[0] * shape[1],
                data.len()
            )));
        }
        Ok(Tensor { shape, data, node: None })
    }

    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor {
            shape: [rows, cols],
            data: vec![0.0; rows * cols],
            node: None,
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Tensor {
        Tensor {
            shape: [rows, cols],
            data: vec![value; rows * cols],
            node: None,
        }
    }

    /// A `[1, 1]` tensor.
    pub fn scalar(value: f64) -> Tensor {
        Tensor {
            shape: [1, 1],
            data: vec![value],
            node: None,
        }
    }

    /// A single-row tensor `[1, d]`.
    pub fn row(values: Vec<f64>) -> Tensor {
        Tensor {
            shape: [1, values.len()],
            data: values,
            node: None,
        }
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The tape node that produced this tensor, if any.
    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.shape[1] + col]
    }

    /// Borrows one row as a slice.
    pub fn row_slice(&self, row: usize) -> &[f64] {
        let d = self.shape[1];
        &self.data[row * d..(row + 1) * d]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies the given rows into a new tensor, in the order given.
    pub fn gather_rows(&self, indices: &[usize]) -> Tensor {
        let d = self.shape[1];
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.row_slice(i));
        }
        Tensor {
            shape: [indices.len(), d],
            data,
            node: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::new([2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new([2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn row_major_indexing() {
        let t = Tensor::new([2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(t.at(0, 2), 3.);
        assert_eq!(t.at(1, 0), 4.);
        assert_eq!(t.row_slice(1), &[4., 5., 6.]);
    }

    #[test]
    fn gather_rows_reorders() {
        let t = Tensor::new([3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let g = t.gather_rows(&[2, 0]);
        assert_eq!(g.shape(), [2, 2]);
        assert_eq!(g.data(), &[5., 6., 1., 2.]);
    }
}
