//! Dense row-major f64 tensors, just large enough for the model graph.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ShapeError {
    #[error("shape mismatch: {left:?} vs {right:?} in {op}")]
    Mismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
}

/// Dense tensor with row-major data. Rank is 1 or 2 everywhere in practice,
/// but the shape is kept general so checkpoints stay self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "data length must match shape product"
        );
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len());
        Self { shape: vec![rows, cols], data }
    }

    /// Uniform init on [-bound, bound].
    pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        Self { shape: shape.to_vec(), data }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Rows of a rank-2 tensor; a vector counts as a single column.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.rank() >= 2 {
            self.shape[1]
        } else {
            1
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn check_same_shape(&self, other: &Tensor, op: &'static str) -> Result<(), ShapeError> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(ShapeError::Mismatch { op, left: self.shape.clone(), right: other.shape.clone() })
        }
    }

    /// y += alpha * x, elementwise.
    pub fn axpy(&mut self, alpha: f64, x: &Tensor) {
        debug_assert!(self.same_shape(x));
        for (a, b) in self.data.iter_mut().zip(x.data.iter()) {
            *a += alpha * b;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.data.iter().zip(other.data.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Matrix product; the right operand may be a vector (treated as a
    /// single column, producing a vector).
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor, ShapeError> {
        let (m, k) = (self.rows(), self.cols());
        let rhs_rows = rhs.rows();
        if k != rhs_rows {
            return Err(ShapeError::Mismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        if rhs.rank() == 1 {
            let mut out = vec![0.0; m];
            for i in 0..m {
                let row = &self.data[i * k..(i + 1) * k];
                out[i] = row.iter().zip(rhs.data.iter()).map(|(a, b)| a * b).sum();
            }
            Ok(Tensor::vector(out))
        } else {
            let n = rhs.cols();
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for p in 0..k {
                    let a = self.data[i * k + p];
                    if a == 0.0 {
                        continue;
                    }
                    let rrow = &rhs.data[p * n..(p + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for j in 0..n {
                        orow[j] += a * rrow[j];
                    }
                }
            }
            Ok(Tensor::matrix(m, n, out))
        }
    }

    /// self^T * rhs, without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Tensor) -> Result<Tensor, ShapeError> {
        let (k, m) = (self.rows(), self.cols());
        if k != rhs.rows() {
            return Err(ShapeError::Mismatch {
                op: "t_matmul",
                left: self.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        if rhs.rank() == 1 {
            let mut out = vec![0.0; m];
            for p in 0..k {
                let b = rhs.data[p];
                if b == 0.0 {
                    continue;
                }
                let arow = &self.data[p * m..(p + 1) * m];
                for i in 0..m {
                    out[i] += arow[i] * b;
                }
            }
            Ok(Tensor::vector(out))
        } else {
            let n = rhs.cols();
            let mut out = vec![0.0; m * n];
            for p in 0..k {
                let arow = &self.data[p * m..(p + 1) * m];
                let brow = &rhs.data[p * n..(p + 1) * n];
                for i in 0..m {
                    let a = arow[i];
                    if a == 0.0 {
                        continue;
                    }
                    let orow = &mut out[i * n..(i + 1) * n];
                    for j in 0..n {
                        orow[j] += a * brow[j];
                    }
                }
            }
            Ok(Tensor::matrix(m, n, out))
        }
    }

    /// self * rhs^T.
    pub fn matmul_t(&self, rhs: &Tensor) -> Result<Tensor, ShapeError> {
        let (m, k) = (self.rows(), self.cols());
        let (n, k2) = (rhs.rows(), rhs.cols());
        if k != k2 {
            return Err(ShapeError::Mismatch {
                op: "matmul_t",
                left: self.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &rhs.data[j * k..(j + 1) * k];
                out[i * n + j] = arow.iter().zip(brow.iter()).map(|(a, b)| a * b).sum();
            }
        }
        Ok(Tensor::matrix(m, n, out))
    }

    /// Outer product of two vectors: (m,) x (n,) -> (m, n).
    pub fn outer(&self, rhs: &Tensor) -> Tensor {
        let m = self.len();
        let n = rhs.len();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a = self.data[i];
            if a == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] = a * rhs.data[j];
            }
        }
        Tensor::matrix(m, n, out)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
