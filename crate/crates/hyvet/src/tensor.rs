//! Dense row-major 2-D `f64` tensors and the handful of kernels the rest of
//! the crate is built on.
//!
//! Shapes are checked with assertions here; the differentiation tape wraps
//! these kernels and turns shape problems into typed errors before they can
//! reach a panic.

use std::ops::{Index, IndexMut};

/// Dense 2-D array of `f64`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must match shape");
        Tensor { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Tensor { rows: r, cols: c, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut t = Tensor::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                t.data[i * cols + j] = f(i, j);
            }
        }
        t
    }

    /// Identity matrix of order `n`.
    pub fn eye(n: usize) -> Self {
        Tensor::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Tensor {
        // Blocked so large matrices stay cache-friendly.
        const B: usize = 64;
        let mut out = Tensor::zeros(self.cols, self.rows);
        for i0 in (0..self.rows).step_by(B) {
            for j0 in (0..self.cols).step_by(B) {
                for i in i0..(i0 + B).min(self.rows) {
                    for j in j0..(j0 + B).min(self.cols) {
                        out.data[j * self.rows + i] = self.data[i * self.cols + j];
                    }
                }
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `self += alpha * other`, used by gradient accumulation.
    pub fn add_scaled(&mut self, other: &Tensor, alpha: f64) {
        assert_eq!(self.shape(), other.shape(), "add_scaled shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    /// `self · other` (m×k by k×n).
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.rows, "matmul inner dimension mismatch");
        let mut out = Tensor::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            self.data.as_ptr(),
            (self.cols as isize, 1),
            other.data.as_ptr(),
            (other.cols as isize, 1),
            &mut out,
        );
        out
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_nt(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.cols, "matmul_nt inner dimension mismatch");
        let mut out = Tensor::zeros(self.rows, other.rows);
        gemm(
            self.rows,
            self.cols,
            other.rows,
            self.data.as_ptr(),
            (self.cols as isize, 1),
            other.data.as_ptr(),
            (1, other.cols as isize),
            &mut out,
        );
        out
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn matmul_tn(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.rows, other.rows, "matmul_tn inner dimension mismatch");
        let mut out = Tensor::zeros(self.cols, other.cols);
        gemm(
            self.cols,
            self.rows,
            other.cols,
            self.data.as_ptr(),
            (1, self.cols as isize),
            other.data.as_ptr(),
            (other.cols as isize, 1),
            &mut out,
        );
        out
    }
}

fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: *const f64,
    (rsa, csa): (isize, isize),
    b: *const f64,
    (rsb, csb): (isize, isize),
    out: &mut Tensor,
) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a,
            rsa,
            csa,
            b,
            rsb,
            csb,
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Index<(usize, usize)> for Tensor {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Tensor {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Dot product with a fixed 4-lane accumulation pattern.
///
/// The lane structure makes the reduction order independent of argument
/// order, so `lane_dot(a, b)` and `lane_dot(b, a)` are bitwise equal — the
/// contrastive loss relies on this to be exactly symmetric in its inputs —
/// while still leaving the compiler free to vectorize the lanes.
pub fn lane_dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let (x, y) = (&a[i * 4..i * 4 + 4], &b[i * 4..i * 4 + 4]);
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    for i in chunks * 4..a.len() {
        acc[i % 4] += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}
