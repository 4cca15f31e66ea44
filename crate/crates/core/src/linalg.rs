//! Small dense matrices for normal equations and sandwich products.
//!
//! Regressor counts are tiny (tens of columns at most), so a row-major
//! `Vec` and a Cholesky factorisation are all that is needed.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Matrix { rows: rows.len(), cols, data: rows.concat() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn matmul(&self, other: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.cols, other.rows, "shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn scale(mut self, factor: T) -> Matrix<T> {
        self.data.iter_mut().for_each(|v| *v *= factor);
        self
    }

    /// Adds `weight · v vᵀ`.
    pub fn add_outer(&mut self, v: &[T], weight: T) {
        assert!(self.rows == v.len() && self.cols == v.len());
        let n = self.cols;
        for (row, &vi) in self.data.chunks_mut(n).zip(v) {
            let wi = weight * vi;
            for (cell, &vj) in row.iter_mut().zip(v) {
                *cell += wi * vj;
            }
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && (0..self.rows).all(|i| (0..i).all(|j| self[(i, j)] == self[(j, i)]))
    }

    /// Copies the lower triangle onto the upper one.
    pub fn symmetrize_from_lower(&mut self) {
        for i in 0..self.rows {
            for j in 0..i {
                self.data[j * self.cols + i] = self.data[i * self.cols + j];
            }
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    lower: Matrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// `None` when a pivot is not positive relative to the diagonal scale.
    pub fn new(a: &Matrix<T>) -> Option<Self> {
        let n = a.rows;
        assert_eq!(n, a.cols, "Cholesky needs a square matrix");
        let scale = a.diagonal().into_iter().fold(T::zero(), |m, v| m.max(v.abs()));
        let floor = scale * T::epsilon() * T::of(n.max(1) as f64 * 16.0);
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > floor) {
                return None;
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Some(Cholesky { lower: l })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.lower.rows;
        assert_eq!(b.len(), n);
        let l = &self.lower;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                let v = l[(i, k)] * y[k];
                y[i] -= v;
            }
            y[i] /= l[(i, i)];
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                let v = l[(k, i)] * y[k];
                y[i] -= v;
            }
            y[i] /= l[(i, i)];
        }
        y
    }

    pub fn inverse(&self) -> Matrix<T> {
        let n = self.lower.rows;
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = T::zero());
            e[j] = T::one();
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        // exact symmetry for downstream sandwich products
        for i in 0..n {
            for j in 0..i {
                let avg = (inv[(i, j)] + inv[(j, i)]) / T::of(2.0);
                inv[(i, j)] = avg;
                inv[(j, i)] = avg;
            }
        }
        inv
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + *x * *y)
}

/// Weighted inner product `Σ wᵢ aᵢ bᵢ`.
pub fn wdot<T: Scalar>(w: &[T], a: &[T], b: &[T]) -> T {
    w.iter().zip(a).zip(b).fold(T::zero(), |s, ((wi, x), y)| s + *wi * *x * *y)
}
