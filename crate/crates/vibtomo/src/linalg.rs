//! Small linear-algebra kernels shared by the solvers.
//!
//! The meshes in this crate are structured grids, so every sparse symmetric
//! system we factor (stiffness matrices, normal matrices of the mode block)
//! has a moderate bandwidth under the natural vertex ordering. A banded
//! Cholesky factorization is simpler and faster at these sizes than a general
//! sparse factorization, and it is bitwise deterministic.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;

use crate::error::{Error, Result};

/// Symmetric matrix stored as its lower band in column-major LAPACK layout:
/// `data[j * (bw + 1) + (i - j)]` holds entry `(i, j)` for `j <= i <= j + bw`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        let bw = bw.min(n.saturating_sub(1));
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(r - c <= self.bw, "entry outside band");
        self.data[c * (self.bw + 1) + (r - c)] += v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if r - c > self.bw {
            return 0.0;
        }
        self.data[c * (self.bw + 1) + (r - c)]
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for j in 0..self.n {
            self.data[j * (self.bw + 1)] += v;
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|j| self.data[j * (self.bw + 1)]).sum()
    }

    pub fn fill_zero(&mut self) {
        self.data.fill(0.0);
    }

    /// Builds the band representation of a symmetric CSR matrix.
    pub fn from_csr(a: &CsrMatrix<f64>) -> Self {
        let n = a.nrows();
        let mut bw = 0usize;
        for (i, j, _) in a.triplet_iter() {
            bw = bw.max(i.abs_diff(j));
        }
        let mut band = Self::zeros(n, bw);
        for (i, j, &v) in a.triplet_iter() {
            if i >= j {
                band.data[j * (band.bw + 1) + (i - j)] = v;
            }
        }
        band
    }

    /// In-place Cholesky factorization `A = L L'` within the band.
    ///
    /// Fails with `Error::Singular` if a pivot is not strictly positive.
    pub fn cholesky(mut self) -> Result<BandCholesky> {
        let n = self.n;
        let bw = self.bw;
        let w = bw + 1;
        for j in 0..n {
            // Update column j with previously factored columns k in [j-bw, j).
            for k in j.saturating_sub(bw)..j {
                let ljk = self.data[k * w + (j - k)];
                if ljk == 0.0 {
                    continue;
                }
                let iend = (k + bw).min(n - 1);
                let len = iend + 1 - j;
                let (head, tail) = self.data.split_at_mut(j * w);
                let src = &head[k * w + (j - k)..k * w + (j - k) + len];
                let dst = &mut tail[..len];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d -= s * ljk;
                }
            }
            let d = self.data[j * w];
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Singular(format!(
                    "non-positive pivot {d:.3e} at column {j} during banded Cholesky"
                )));
            }
            let inv = 1.0 / d.sqrt();
            let len = (j + bw).min(n - 1) + 1 - j;
            for x in &mut self.data[j * w..j * w + len] {
                *x *= inv;
            }
        }
        Ok(BandCholesky { band: self })
    }
}

/// Cholesky factor of a [`BandMatrix`], reusable for repeated solves.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    band: BandMatrix,
}

impl BandCholesky {
    pub fn n(&self) -> usize {
        self.band.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.band.n;
        let bw = self.band.bw;
        let w = bw + 1;
        let d = &self.band.data;
        // Forward: L y = b.
        for j in 0..n {
            let bj = b[j] / d[j * w];
            b[j] = bj;
            let iend = (j + bw).min(n - 1);
            for i in (j + 1)..=iend {
                b[i] -= d[j * w + (i - j)] * bj;
            }
        }
        // Backward: L' x = y.
        for j in (0..n).rev() {
            let iend = (j + bw).min(n - 1);
            let mut s = b[j];
            for i in (j + 1)..=iend {
                s -= d[j * w + (i - j)] * b[i];
            }
            b[j] = s / d[j * w];
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_in_place(x.as_mut_slice());
        x
    }

    /// Solves for every column of `b` in place.
    pub fn solve_matrix_in_place(&self, b: &mut DMatrix<f64>) {
        for mut col in b.column_iter_mut() {
            let slice: &mut [f64] = col.as_mut_slice();
            self.solve_in_place(slice);
        }
    }
}

/// Accumulates `out += scale * a' a` for a symmetric CSR matrix `a`,
/// writing the product directly into band storage (Gustavson row merge).
///
/// `a` must be symmetric so that `a' a = a a`; rows of the product stay
/// within twice the bandwidth of `a`.
pub fn accumulate_ata_band(out: &mut BandMatrix, a: &CsrMatrix<f64>, scale: f64) {
    let n = a.nrows();
    debug_assert_eq!(out.n, n);
    let bw = out.bw;
    let w = bw + 1;
    let offsets = a.row_offsets();
    let cols = a.col_indices();
    let vals = a.values();
    let mut row_acc = vec![0.0f64; 2 * bw + 1];
    for i in 0..n {
        let lo = i.saturating_sub(bw);
        let hi = (i + bw).min(n - 1);
        for x in row_acc[..(hi - lo + 1)].iter_mut() {
            *x = 0.0;
        }
        for idx in offsets[i]..offsets[i + 1] {
            let j = cols[idx];
            let aij = vals[idx];
            if aij == 0.0 {
                continue;
            }
            for idx2 in offsets[j]..offsets[j + 1] {
                let l = cols[idx2];
                debug_assert!(l >= lo && l <= hi, "product entry escapes band");
                row_acc[l - lo] += aij * vals[idx2];
            }
        }
        // Keep the lower half (columns <= i): entry (i, c) lives in column c.
        for c in lo..=i {
            out.data[c * w + (i - c)] += scale * row_acc[c - lo];
        }
    }
}

/// Accumulates `out += scale * b` for a symmetric CSR matrix `b` (lower half).
pub fn accumulate_csr_band(out: &mut BandMatrix, b: &CsrMatrix<f64>, scale: f64) {
    let bw = out.bw;
    let w = bw + 1;
    for (i, j, &v) in b.triplet_iter() {
        if i >= j {
            debug_assert!(i - j <= bw);
            out.data[j * w + (i - j)] += scale * v;
        }
    }
}

/// Maximum |i - j| over the structural nonzeros of `a`.
pub fn csr_bandwidth(a: &CsrMatrix<f64>) -> usize {
    let mut bw = 0usize;
    for (i, j, _) in a.triplet_iter() {
        bw = bw.max(i.abs_diff(j));
    }
    bw
}

/// `y = a x` for CSR `a`.
pub fn csr_mul_vec(a: &CsrMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut y = DVector::zeros(a.nrows());
    csr_mul_vec_into(a, x.as_slice(), y.as_mut_slice());
    y
}

/// `y = a x` writing into a slice.
pub fn csr_mul_vec_into(a: &CsrMatrix<f64>, x: &[f64], y: &mut [f64]) {
    let offsets = a.row_offsets();
    let cols = a.col_indices();
    let vals = a.values();
    for (i, yi) in y.iter_mut().enumerate() {
        let mut s = 0.0;
        for idx in offsets[i]..offsets[i + 1] {
            s += vals[idx] * x[cols[idx]];
        }
        *yi = s;
    }
}

/// `Y = a X` for CSR `a` and dense `X`, column by column.
pub fn csr_mul_mat(a: &CsrMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(a.nrows(), x.ncols());
    for c in 0..x.ncols() {
        let src = x.column(c);
        let mut dst = y.column_mut(c);
        csr_mul_vec_into(a, src.as_slice(), dst.as_mut_slice());
    }
    y
}
