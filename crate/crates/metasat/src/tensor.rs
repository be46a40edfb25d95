//! Dense row-major 64-bit float tensors.
//!
//! Shapes are explicit and validated at the API boundary; every public
//! operation leaves only finite values behind.

use crate::error::{Error, Result};

/// A shaped, row-major buffer of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from raw data, validating length and finiteness.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!(
                "tensor shape {shape:?} has a zero dimension"
            )));
        }
        if data.len() != expect {
            return Err(Error::Dimension(format!(
                "tensor shape {shape:?} needs {expect} values, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value {bad} in tensor of shape {shape:?}"
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(other.shape.clone())
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Number of rows when interpreted as a matrix (first dimension).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    /// One row of a rank-2 tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    /// Returns an error unless every element is finite.
    pub fn validate_finite(&self, context: &str) -> Result<()> {
        if let Some(bad) = self.data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value {bad} in {context} (shape {:?})",
                self.shape
            )));
        }
        Ok(())
    }

    /// `self -= scale * other`, elementwise over identical shapes.
    pub fn axpy(&mut self, scale: f64, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "axpy shapes differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "dot shapes differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .sum())
    }

    /// Gathers a sub-matrix from the given row indices of a rank-2 tensor.
    pub fn gather_rows(&self, indices: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Tensor {
            shape: vec![indices.len(), c],
            data,
        }
    }
}
