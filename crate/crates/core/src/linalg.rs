//! Dense row-major matrices and Cholesky factorization.
//!
//! Just enough linear algebra for Gaussian process regression: the kernel
//! matrices here are small (tens to a few hundred rows), so a straightforward
//! O(n^3) factorization is the right tool.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{ln, sqrt};

/// Dense row-major matrix of f64.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from a flat row-major buffer. Panics if the length does not
    /// factor as rows*cols; that is a programming error, not a data error.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "buffer length != rows*cols");
        Self { rows, cols, data }
    }

    /// Matrix with zero rows, ready to grow via `push_row`.
    pub fn empty(cols: usize) -> Self {
        Self {
            rows: 0,
            cols,
            data: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.cols, "row length != cols");
        self.data.extend_from_slice(row);
        self.rows += 1;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Iterate over rows as slices.
    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1))
    }
}

/// Failure of a numerical factorization.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum LinalgError {
    /// A pivot during Cholesky was non-positive: the matrix is not positive
    /// definite at working precision.
    #[error("matrix not positive definite: pivot {pivot_index} = {pivot_value:.3e}")]
    NotPositiveDefinite { pivot_index: usize, pivot_value: f64 },
}

/// Lower-triangular Cholesky factor L with A = L L^T.
#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

/// Factor a symmetric positive-definite matrix, reading its lower triangle.
// The negated pivot comparison sends NaN pivots to the failure branch.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn cholesky(a: &Matrix) -> Result<Cholesky, LinalgError> {
    assert_eq!(a.rows(), a.cols(), "cholesky needs a square matrix");
    let n = a.rows();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(LinalgError::NotPositiveDefinite {
                        pivot_index: i,
                        pivot_value: s,
                    });
                }
                l[i * n + i] = sqrt(s);
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(Cholesky { n, l })
}

impl Cholesky {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solve A x = b using the stored factor.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut y = self.solve_lower(b);
        // Back substitution with L^T.
        for i in (0..self.n).rev() {
            let mut s = y[i];
            for k in i + 1..self.n {
                s -= self.l[k * self.n + i] * y[k];
            }
            y[i] = s / self.l[i * self.n + i];
        }
        y
    }

    /// Solve L y = b (forward substitution only).
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "rhs length != dimension");
        let mut y = b.to_vec();
        for i in 0..self.n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * self.n + k] * y[k];
            }
            y[i] = s / self.l[i * self.n + i];
        }
        y
    }

    /// The factor as a flat row-major n*n buffer (upper triangle zero).
    /// Useful for drawing correlated Gaussians: y = L z has covariance A.
    pub fn lower(&self) -> &[f64] {
        &self.l
    }

    /// log det A = 2 * sum(ln L_ii).
    pub fn log_det(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            s += ln(self.l[i * self.n + i]);
        }
        2.0 * s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd3() -> Matrix {
        // A = [[4,2,1],[2,5,3],[1,3,6]]; hand-checked positive definite.
        Matrix::from_vec(3, 3, vec![4.0, 2.0, 1.0, 2.0, 5.0, 3.0, 1.0, 3.0, 6.0])
    }

    #[test]
    fn factor_reconstructs_matrix() {
        let a = spd3();
        let ch = cholesky(&a).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += ch.l[i * 3 + k] * ch.l[j * 3 + k];
                }
                assert!((s - a.get(i, j)).abs() < 1e-12, "({i},{j}): {s}");
            }
        }
    }

    #[test]
    fn solve_matches_direct_inverse() {
        let a = spd3();
        let ch = cholesky(&a).unwrap();
        let b = [1.0, -2.0, 0.5];
        let x = ch.solve(&b);
        // Residual check: A x == b.
        for i in 0..3 {
            let mut r = -b[i];
            for j in 0..3 {
                r += a.get(i, j) * x[j];
            }
            assert!(r.abs() < 1e-12, "residual {r} at {i}");
        }
    }

    #[test]
    fn log_det_matches_cofactor_expansion() {
        // det of spd3 by cofactor expansion: 4*(30-9) - 2*(12-3) + 1*(6-5) = 67.
        let ch = cholesky(&spd3()).unwrap();
        assert!((ch.log_det() - 67.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 2.0, 1.0]);
        match cholesky(&a) {
            Err(LinalgError::NotPositiveDefinite { pivot_index, .. }) => {
                assert_eq!(pivot_index, 1)
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn push_row_grows_matrix() {
        let mut m = Matrix::empty(2);
        m.push_row(&[1.0, 2.0]);
        m.push_row(&[3.0, 4.0]);
        assert_eq!(m.rows(), 2);
        assert_eq!(m.row(1), &[3.0, 4.0]);
    }
}
