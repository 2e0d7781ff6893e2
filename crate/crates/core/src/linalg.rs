// Copyright 2026 The copal Authors
// SPDX-License-Identifier: Apache-2.0

//! Dense small-matrix arithmetic in double precision.
//!
//! [`Matrix`] is the carrier for weights, activations, perturbations, gradients
//! and importance maps. Every constructor and every operation rejects
//! non-finite results, so a `Matrix` value always holds finite entries.
//!
//! The singular value decomposition is a one-sided (Hestenes) Jacobi sweep,
//! which is accurate for the small, dense matrices used here and needs no
//! bidiagonalisation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative cutoff applied to singular values when none is given.
pub const DEFAULT_PINV_TOL: f64 = 1e-10;

/// Maximum number of Jacobi sweeps before the SVD reports non-convergence.
pub const SVD_MAX_SWEEPS: usize = 100;

/// Off-diagonal threshold for the Jacobi sweep.
pub const SVD_CONVERGENCE: f64 = 1e-12;

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} ", self.rows, self.cols)?;
        if self.data.len() <= 64 {
            f.debug_list().entries(self.data.chunks(self.cols)).finish()
        } else {
            write!(f, "[..]")
        }
    }
}

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Numerical(format!("{what}: non-finite entry at flat index {i}"))),
        None => Ok(()),
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape(format!("matrix dimensions must be positive, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(format!("data length {} does not match {rows}x{cols}", data.len())));
        }
        check_finite(&data, "Matrix::new")?;
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from row slices. Panics on ragged or non-finite input;
    /// intended for literals.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Matrix::new(rows.len(), cols, data).expect("invalid matrix literal")
    }

    pub fn column(values: &[f64]) -> Result<Self> {
        Matrix::new(values.len(), 1, values.to_vec())
    }

    pub fn row_vector(values: &[f64]) -> Result<Self> {
        Matrix::new(1, values.len(), values.to_vec())
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0 && value.is_finite());
        Matrix { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix::filled(rows, cols, 0.0)
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Matrix::filled(rows, cols, 1.0)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Result<Self> {
        let n = diag.len();
        let mut data = vec![0.0; n * n];
        for (i, &d) in diag.iter().enumerate() {
            data[i * n + i] = d;
        }
        Matrix::new(n, n, data)
    }

    /// Builds a matrix from a generator; the result is validated.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix::new(rows, cols, data)
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Replaces one entry. Non-finite values are rejected.
    pub fn set(&mut self, r: usize, c: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Numerical(format!("refusing non-finite value at ({r}, {c})")));
        }
        self.data[r * self.cols + c] = value;
        Ok(())
    }

    /// Mutable access for in-crate hot loops; callers must keep entries finite.
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn same_shape(&self, other: &Matrix, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!("{op}: {}x{} vs {}x{}", self.rows, self.cols, other.rows, other.cols)));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Matrix, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.same_shape(other, op)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Matrix::new(self.rows, self.cols, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Matrix> {
        Matrix::new(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn elementwise_mul(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "elementwise_mul", |a, b| a * b)
    }

    pub fn elementwise_abs(&self) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v.abs()).collect() }
    }

    pub fn scale(&self, k: f64) -> Result<Matrix> {
        self.map(|v| v * k)
    }

    /// `self += other`, in place.
    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        check_finite(&self.data, "add_assign")
    }

    pub fn transpose(&self) -> Matrix {
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Matrix { rows: self.cols, cols: self.rows, data }
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "matmul: {}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let out_row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        check_finite(&out, "matmul")?;
        Ok(Matrix { rows: n, cols: m, data: out })
    }

    /// `self * other^T` without materialising the transpose.
    pub fn matmul_transb(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::shape(format!(
                "matmul_transb: {}x{} times ({}x{})^T",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (n, k, m) = (self.rows, self.cols, other.rows);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..m {
                let b_row = &other.data[j * k..(j + 1) * k];
                out[i * m + j] = a_row.iter().zip(b_row).map(|(a, b)| a * b).sum();
            }
        }
        check_finite(&out, "matmul_transb")?;
        Ok(Matrix { rows: n, cols: m, data: out })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Root-mean-square of the entries.
    pub fn rms(&self) -> f64 {
        self.frobenius_norm() / (self.data.len() as f64).sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Mean over rows, returned as a column vector of length `cols`.
    pub fn column_means(&self) -> Matrix {
        let mut acc = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (a, v) in acc.iter_mut().zip(self.row(r)) {
                *a += v;
            }
        }
        let n = self.rows as f64;
        Matrix { rows: self.cols, cols: 1, data: acc.into_iter().map(|v| v / n).collect() }
    }

    /// L2 norm of every column, returned as a column vector of length `cols`.
    pub fn column_norms(&self) -> Matrix {
        let mut acc = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (a, v) in acc.iter_mut().zip(self.row(r)) {
                *a += v * v;
            }
        }
        Matrix { rows: self.cols, cols: 1, data: acc.into_iter().map(f64::sqrt).collect() }
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Matrix> {
        if start >= end || end > self.rows {
            return Err(Error::shape(format!("row slice {start}..{end} of {} rows", self.rows)));
        }
        Matrix::new(end - start, self.cols, self.data[start * self.cols..end * self.cols].to_vec())
    }

    pub fn svd(&self) -> Result<Svd> {
        Svd::compute(self)
    }

    pub fn pseudoinverse(&self, tol: f64) -> Result<Matrix> {
        pseudoinverse(self, tol)
    }
}

/// Thin SVD, `A = U diag(s) V^T`, singular values sorted descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
    pub sweeps: usize,
}

impl Svd {
    pub fn compute(a: &Matrix) -> Result<Svd> {
        if a.rows >= a.cols {
            jacobi_tall(a)
        } else {
            let t = jacobi_tall(&a.transpose())?;
            Ok(Svd { u: t.v, s: t.s, v: t.u, sweeps: t.sweeps })
        }
    }

    pub fn max_singular(&self) -> f64 {
        self.s.first().copied().unwrap_or(0.0)
    }
}

/// One-sided Jacobi on a matrix with rows >= cols. Columns of `A` are kept
/// as contiguous rows of a working buffer.
fn jacobi_tall(a: &Matrix) -> Result<Svd> {
    let (m, n) = a.shape();
    let mut work = a.transpose().data; // n rows of length m
    let mut v = Matrix::identity(n).data; // stored transposed: row j is column j of V

    let mut sweeps = 0;
    let mut converged = n == 1;
    while !converged {
        if sweeps == SVD_MAX_SWEEPS {
            return Err(Error::Numerical(format!(
                "SVD of {m}x{n} matrix did not converge after {SVD_MAX_SWEEPS} sweeps"
            )));
        }
        sweeps += 1;
        let mut off = 0.0f64;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let (cp, cq) = (&work[p * m..(p + 1) * m], &work[q * m..(q + 1) * m]);
                let alpha: f64 = cp.iter().map(|x| x * x).sum();
                let beta: f64 = cq.iter().map(|x| x * x).sum();
                let gamma: f64 = cp.iter().zip(cq).map(|(x, y)| x * y).sum();
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let measure = gamma.abs() / (alpha * beta).sqrt();
                off = off.max(measure);
                if measure < SVD_CONVERGENCE {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut work, m, p, q, c, s);
                rotate(&mut v, n, p, q, c, s);
            }
        }
        converged = off < SVD_CONVERGENCE;
    }

    let mut sigma: Vec<(f64, usize)> =
        (0..n).map(|j| (work[j * m..(j + 1) * m].iter().map(|x| x * x).sum::<f64>().sqrt(), j)).collect();
    sigma.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));

    let mut u = vec![0.0; m * n];
    let mut vv = vec![0.0; n * n];
    let mut s = Vec::with_capacity(n);
    for (k, &(sv, j)) in sigma.iter().enumerate() {
        s.push(sv);
        for i in 0..m {
            u[i * n + k] = if sv > 0.0 { work[j * m + i] / sv } else { 0.0 };
        }
        for i in 0..n {
            vv[i * n + k] = v[j * n + i];
        }
    }
    Ok(Svd { u: Matrix::new(m, n, u)?, s, v: Matrix::new(n, n, vv)?, sweeps })
}

fn rotate(buf: &mut [f64], len: usize, p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = buf.split_at_mut(q * len);
    let cp = &mut head[p * len..(p + 1) * len];
    let cq = &mut tail[..len];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.matmul(b)
}

pub fn frobenius_norm(a: &Matrix) -> f64 {
    a.frobenius_norm()
}

/// Moore-Penrose pseudoinverse via SVD. Singular values at or below
/// `tol * sigma_max` are treated as zero.
pub fn pseudoinverse(a: &Matrix, tol: f64) -> Result<Matrix> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Usage(format!("pseudoinverse tolerance must be positive, got {tol}")));
    }
    let svd = a.svd()?;
    let cutoff = tol * svd.max_singular();
    let (m, n) = a.shape();
    let k = svd.s.len();
    // A+ = V diag(1/s) U^T, shape n x m
    let mut out = vec![0.0; n * m];
    for (idx, &sv) in svd.s.iter().enumerate() {
        if sv <= cutoff || sv == 0.0 {
            continue;
        }
        let inv = 1.0 / sv;
        for i in 0..n {
            let vi = svd.v.as_slice()[i * k + idx] * inv;
            if vi == 0.0 {
                continue;
            }
            let row = &mut out[i * m..(i + 1) * m];
            for (j, o) in row.iter_mut().enumerate() {
                *o += vi * svd.u.as_slice()[j * k + idx];
            }
        }
    }
    Matrix::new(n, m, out)
}

/// Number of singular values strictly above `tol * sigma_max`.
pub fn rank(a: &Matrix, tol: f64) -> Result<usize> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Usage(format!("rank tolerance must be positive, got {tol}")));
    }
    let svd = a.svd()?;
    let cutoff = tol * svd.max_singular();
    Ok(svd.s.iter().filter(|&&s| s > cutoff && s > 0.0).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal)).unwrap()
    }

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Vec<f64> {
        let mut out = vec![0.0; a.rows() * b.cols()];
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for p in 0..a.cols() {
                    acc += a.get(i, p) * b.get(p, j);
                }
                out[i * b.cols() + j] = acc;
            }
        }
        out
    }

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn matmul_identity_and_selection() {
        let v = Matrix::from_rows(&[&[3.0], &[4.0]]);
        assert_eq!(Matrix::identity(2).matmul(&v).unwrap(), v);
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let e = Matrix::from_rows(&[&[0.0], &[1.0]]);
        assert_eq!(a.matmul(&e).unwrap(), Matrix::from_rows(&[&[2.0], &[4.0]]));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = gaussian(3, 4, &mut rng);
        let b = gaussian(4, 2, &mut rng);
        let got = a.matmul(&b).unwrap();
        for (g, w) in got.as_slice().iter().zip(naive_matmul(&a, &b)) {
            assert!((g - w).abs() < 1e-14);
        }
        let bt = b.transpose();
        assert!(rel_err(&a.matmul_transb(&bt).unwrap(), &got) < 1e-15);
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(a.matmul(&a), Err(Error::Shape(_))));
        assert!(matches!(a.add(&Matrix::zeros(3, 2)), Err(Error::Shape(_))));
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::new(0, 2, vec![]).is_err());
        assert!(matches!(Matrix::new(1, 2, vec![1.0, f64::NAN]), Err(Error::Numerical(_))));
        let big = Matrix::from_rows(&[&[1e300]]);
        assert!(big.matmul(&big).is_err());
    }

    #[test]
    fn elementwise_algebra() {
        assert_eq!(Matrix::from_rows(&[&[3.0, 4.0]]).frobenius_norm(), 5.0);
        let a = Matrix::from_rows(&[&[1.5, -2.0], &[0.0, 7.0]]);
        assert_eq!(a.elementwise_mul(&Matrix::ones(2, 2)).unwrap(), a);
        assert_eq!(Matrix::from_rows(&[&[-1.0, 2.0]]).elementwise_abs(), Matrix::from_rows(&[&[1.0, 2.0]]));
        assert_eq!(a.sub(&a).unwrap(), Matrix::zeros(2, 2));
        assert_eq!(a.scale(2.0).unwrap(), a.add(&a).unwrap());
    }

    #[test]
    fn pinv_examples() {
        let i3 = Matrix::identity(3);
        assert!(rel_err(&pseudoinverse(&i3, DEFAULT_PINV_TOL).unwrap(), &i3) < 1e-15);
        let d = Matrix::from_diag(&[2.0, 4.0]).unwrap();
        let want = Matrix::from_diag(&[0.5, 0.25]).unwrap();
        assert!(rel_err(&pseudoinverse(&d, DEFAULT_PINV_TOL).unwrap(), &want) < 1e-15);
    }

    #[test]
    fn pinv_penrose_full_rank_tall() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = gaussian(3, 2, &mut rng);
        let p = pseudoinverse(&a, DEFAULT_PINV_TOL).unwrap();
        assert_eq!(p.shape(), (2, 3));
        let apa = a.matmul(&p).unwrap().matmul(&a).unwrap();
        let pap = p.matmul(&a).unwrap().matmul(&p).unwrap();
        assert!(apa.sub(&a).unwrap().frobenius_norm() < 1e-6);
        assert!(pap.sub(&p).unwrap().frobenius_norm() < 1e-6);
    }

    #[test]
    fn pinv_of_rank_deficient_and_zero() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        let p = pseudoinverse(&a, DEFAULT_PINV_TOL).unwrap();
        let apa = a.matmul(&p).unwrap().matmul(&a).unwrap();
        assert!(rel_err(&apa, &a) < 1e-12);
        let z = pseudoinverse(&Matrix::zeros(2, 3), DEFAULT_PINV_TOL).unwrap();
        assert_eq!(z, Matrix::zeros(3, 2));
        assert!(pseudoinverse(&a, 0.0).is_err());
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank(&Matrix::identity(2), DEFAULT_PINV_TOL).unwrap(), 2);
        assert_eq!(rank(&Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]), DEFAULT_PINV_TOL).unwrap(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = gaussian(4, 3, &mut rng);
        // oracle: smallest singular value via the Gram matrix determinant being nonzero
        let svd = g.svd().unwrap();
        assert!(svd.s[2] > 1e-6);
        assert_eq!(rank(&g, DEFAULT_PINV_TOL).unwrap(), 3);
    }

    #[test]
    fn svd_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for &(r, c) in &[(5, 3), (3, 5), (6, 6), (1, 4), (4, 1)] {
            let a = gaussian(r, c, &mut rng);
            let svd = a.svd().unwrap();
            let k = svd.s.len();
            let us = Matrix::from_fn(svd.u.rows(), k, |i, j| svd.u.get(i, j) * svd.s[j]).unwrap();
            let rec = us.matmul_transb(&svd.v).unwrap();
            assert!(rel_err(&rec, &a) < 1e-12, "{r}x{c}");
            assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn small_matrix() -> impl Strategy<Value = Matrix> {
            (1usize..7, 1usize..7).prop_flat_map(|(r, c)| {
                proptest::collection::vec(-5.0f64..5.0, r * c).prop_map(move |d| Matrix::new(r, c, d).unwrap())
            })
        }

        proptest! {
            #[test]
            fn penrose_conditions(a in small_matrix()) {
                prop_assume!(a.frobenius_norm() > 1e-3);
                let p = pseudoinverse(&a, DEFAULT_PINV_TOL).unwrap();
                let ap = a.matmul(&p).unwrap();
                let pa = p.matmul(&a).unwrap();
                prop_assert!(rel_err(&ap.matmul(&a).unwrap(), &a) < 1e-6);
                prop_assert!(rel_err(&pa.matmul(&p).unwrap(), &p) < 1e-6);
                prop_assert!(ap.sub(&ap.transpose()).unwrap().frobenius_norm() < 1e-6 * ap.frobenius_norm().max(1.0));
                prop_assert!(pa.sub(&pa.transpose()).unwrap().frobenius_norm() < 1e-6 * pa.frobenius_norm().max(1.0));
            }

            #[test]
            fn matmul_associative(seed in any::<u64>(), n in 1usize..5, k in 1usize..5, l in 1usize..5, m in 1usize..5) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = gaussian(n, k, &mut rng);
                let b = gaussian(k, l, &mut rng);
                let c = gaussian(l, m, &mut rng);
                let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
                let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
                prop_assert!(left.sub(&right).unwrap().frobenius_norm() <= 1e-12 * (1.0 + left.frobenius_norm()));
            }

            #[test]
            fn double_pinv_recovers_full_rank(seed in any::<u64>(), r in 1usize..6, c in 1usize..6) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = gaussian(r, c, &mut rng);
                let svd = a.svd().unwrap();
                // well-conditioned instances only; Gaussian matrices are full rank almost surely
                prop_assume!(svd.s.last().unwrap() / svd.s[0] > 1e-4);
                let pp = pseudoinverse(&pseudoinverse(&a, DEFAULT_PINV_TOL).unwrap(), DEFAULT_PINV_TOL).unwrap();
                prop_assert!(rel_err(&pp, &a) < 1e-5);
            }
        }
    }
}
