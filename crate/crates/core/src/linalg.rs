//! Small dense linear-algebra kernels used by the solvers.
//!
//! Matrices are row-major `f64`. The kernels are written for the access
//! patterns the solvers need (row streaming over `A`), not as a general
//! BLAS replacement.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data. Panics if the length is wrong.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major buffer has wrong length");
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `out = A x`
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        let n = self.cols;
        let mut i = 0;
        while i + BLOCK <= self.rows {
            let rows: [&[f64]; BLOCK] = std::array::from_fn(|r| self.row(i + r));
            out[i..i + BLOCK].copy_from_slice(&block_dots(&rows, x, n));
            i += BLOCK;
        }
        for (k, o) in out.iter_mut().enumerate().skip(i) {
            *o = dot(self.row(k), x);
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.mul_vec_into(x, &mut out);
        out
    }

    /// `out = Aᵀ r`
    pub fn tr_mul_vec_into(&self, r: &[f64], out: &mut [f64]) {
        debug_assert_eq!(r.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &ri) in r.iter().enumerate() {
            if ri != 0.0 {
                axpy(ri, self.row(i), out);
            }
        }
    }

    pub fn tr_mul_vec(&self, r: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.tr_mul_vec_into(r, &mut out);
        out
    }

    /// `out = Aᵀ (A x - y)` in a single pass over the rows of `A`.
    /// Returns `‖A x - y‖²`.
    pub fn normal_residual_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) -> f64 {
        debug_assert_eq!(y.len(), self.rows);
        out.iter_mut().for_each(|o| *o = 0.0);
        let n = self.cols;
        let mut sq = 0.0;
        let mut i = 0;
        // Blocks of rows share each pass over `x` and `out`.
        while i + BLOCK <= self.rows {
            let rows: [&[f64]; BLOCK] = std::array::from_fn(|r| self.row(i + r));
            let mut t = block_dots(&rows, x, n);
            for (r, tr) in t.iter_mut().enumerate() {
                *tr -= y[i + r];
                sq += *tr * *tr;
            }
            for (j, o) in out.iter_mut().enumerate() {
                let mut v = *o;
                for r in 0..BLOCK {
                    v += t[r] * rows[r][j];
                }
                *o = v;
            }
            i += BLOCK;
        }
        for (k, &yk) in y.iter().enumerate().skip(i) {
            let row = self.row(k);
            let t = dot(row, x) - yk;
            sq += t * t;
            axpy(t, row, out);
        }
        sq
    }

    /// `AᵀA`, exploiting symmetry.
    pub fn gram(&self) -> Matrix {
        let n = self.cols;
        let mut g = vec![0.0; n * n];
        // Upper triangle via rank-one row updates, then mirror.
        for i in 0..self.rows {
            let row = self.row(i);
            for (j, &aij) in row.iter().enumerate() {
                if aij == 0.0 {
                    continue;
                }
                axpy(aij, &row[j..], &mut g[j * n + j..(j + 1) * n]);
            }
        }
        for j in 0..n {
            for k in (j + 1)..n {
                g[k * n + j] = g[j * n + k];
            }
        }
        Matrix::from_row_major(n, n, g)
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let (a, b) = (self.get(i, j), self.get(j, i));
                if (a - b).abs() > tol * (1.0 + a.abs().max(b.abs())) {
                    return false;
                }
            }
        }
        true
    }

    /// Power-iteration estimate of the largest eigenvalue of `AᵀA`.
    ///
    /// Deterministic (fixed start vector). The returned value is a Rayleigh
    /// quotient, hence a lower bound that converges from below.
    pub fn gram_spectral_estimate(&self, iterations: usize) -> f64 {
        let n = self.cols;
        if n == 0 || self.rows == 0 {
            return 0.0;
        }
        let mut v: Vec<f64> = (0..n).map(|j| 1.0 + 0.5 * ((j % 7) as f64) / 7.0).collect();
        let nv = norm2(&v);
        v.iter_mut().for_each(|e| *e /= nv);
        let mut av = vec![0.0; self.rows];
        let mut w = vec![0.0; n];
        let mut lambda = 0.0;
        for _ in 0..iterations.max(1) {
            self.mul_vec_into(&v, &mut av);
            self.tr_mul_vec_into(&av, &mut w);
            lambda = dot(&v, &w);
            let nw = norm2(&w);
            if nw == 0.0 {
                return 0.0;
            }
            for (vi, wi) in v.iter_mut().zip(&w) {
                *vi = wi / nw;
            }
        }
        lambda
    }
}

/// Rows handled together by the blocked kernels.
const BLOCK: usize = 8;

/// `rows[r]·x` for a block of rows, summed in the same order as [`dot`].
#[inline]
fn block_dots(rows: &[&[f64]; BLOCK], x: &[f64], n: usize) -> [f64; BLOCK] {
    let chunks = n / 4;
    let mut acc = [[0.0f64; 4]; BLOCK];
    for k in 0..chunks {
        let j = 4 * k;
        let xv = [x[j], x[j + 1], x[j + 2], x[j + 3]];
        for (a, row) in acc.iter_mut().zip(rows) {
            let row = &row[j..j + 4];
            for l in 0..4 {
                a[l] += row[l] * xv[l];
            }
        }
    }
    std::array::from_fn(|r| {
        let a = acc[r];
        let mut s = (a[0] + a[1]) + (a[2] + a[3]);
        for j in 4 * chunks..n {
            s += rows[r][j] * x[j];
        }
        s
    })
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four accumulators let the compiler vectorize without reassociation
    // surprises across platforms.
    let chunks = a.len() / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..chunks {
        let i = 4 * k;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Dense Cholesky factor `L` of a symmetric positive definite matrix stored
/// row-major in `a` (`n × n`). Returns `None` if a pivot is not positive.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / djj;
        }
    }
    Some(l)
}

/// Solves `L Lᵀ x = b` given the Cholesky factor from [`cholesky`].
pub fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut z = b.to_vec();
    for i in 0..n {
        let mut s = z[i];
        for k in 0..i {
            s -= l[i * n + k] * z[k];
        }
        z[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * z[k];
        }
        z[i] = s / l[i * n + i];
    }
    z
}
