use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major `f64` array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    /// Uniform in `±sqrt(1 / fan_in)`.
    pub fn uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Self {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.random_range(-bound..=bound)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Tensor::zeros(&self.shape)
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    /// `out += self · x` for a `[rows, cols]` matrix.
    pub fn matvec_acc(&self, x: &[f64], out: &mut [f64]) {
        let c = self.cols();
        debug_assert_eq!(x.len(), c);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(c)) {
            *o += dot(row, x);
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows()];
        self.matvec_acc(x, &mut out);
        out
    }

    /// `out += selfᵀ · y`.
    pub fn matvec_t_acc(&self, y: &[f64], out: &mut [f64]) {
        let c = self.cols();
        for (&g, row) in y.iter().zip(self.data.chunks_exact(c)) {
            if g != 0.0 {
                axpy(g, row, out);
            }
        }
    }

    /// `self += y ⊗ x`.
    pub fn add_outer(&mut self, y: &[f64], x: &[f64]) {
        let c = self.cols();
        for (&g, row) in y.iter().zip(self.data.chunks_exact_mut(c)) {
            if g != 0.0 {
                axpy(g, x, row);
            }
        }
    }

    /// `out += self[:, offset..offset + x.len()] · x`.
    pub fn matvec_cols_acc(&self, x: &[f64], offset: usize, out: &mut [f64]) {
        let c = self.cols();
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(c)) {
            *o += dot(&row[offset..offset + x.len()], x);
        }
    }

    /// `out += self[:, offset..offset + out.len()]ᵀ · y`.
    pub fn matvec_t_cols_acc(&self, y: &[f64], offset: usize, out: &mut [f64]) {
        let c = self.cols();
        let n = out.len();
        for (&g, row) in y.iter().zip(self.data.chunks_exact(c)) {
            if g != 0.0 {
                axpy(g, &row[offset..offset + n], out);
            }
        }
    }

    /// `self[:, offset..offset + x.len()] += y ⊗ x`.
    pub fn add_outer_cols(&mut self, y: &[f64], x: &[f64], offset: usize) {
        let c = self.cols();
        for (&g, row) in y.iter().zip(self.data.chunks_exact_mut(c)) {
            if g != 0.0 {
                axpy(g, x, &mut row[offset..offset + x.len()]);
            }
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|x| *x *= k);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a · x`.
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
