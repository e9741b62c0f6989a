//! Dense real linear algebra.
//!
//! Matrices are row-major `f64` arrays. Everything here is a pure function of
//! its inputs and deterministic down to the bit: loops run in a fixed order and
//! there is no threading.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Relative elementwise tolerance for accepting a matrix as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Default sweep budget for [`sym_eig`].
pub const DEFAULT_JACOBI_SWEEPS: usize = 100;

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err(
                "from_vec",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(shape_err("from_rows", "ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Column vector (`n x 1`).
    pub fn column(data: Vec<f64>) -> Self {
        Self {
            rows: data.len(),
            cols: 1,
            data,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// The single entry of a `1 x 1` matrix.
    pub fn to_scalar(&self) -> Result<f64> {
        if self.shape() != (1, 1) {
            return Err(shape_err("to_scalar", format!("{}x{}", self.rows, self.cols)));
        }
        Ok(self.data[0])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols))
            .map(|i| self.data[i * self.cols + i])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self · rhs`. Each output entry accumulates its products in ascending
    /// inner index, so `A·Aᵀ` comes out exactly symmetric.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(shape_err(
                "matmul",
                format!(
                    "{}x{} times {}x{}",
                    self.rows, self.cols, rhs.rows, rhs.cols
                ),
            ));
        }
        let (n, m) = (self.rows, rhs.cols);
        let mut out = Self::zeros(n, m);
        if m == 1 {
            for (i, o) in out.data.iter_mut().enumerate() {
                let row = &self.data[i * self.cols..(i + 1) * self.cols];
                let mut acc = 0.0;
                for (&a, &b) in row.iter().zip(&rhs.data) {
                    if a != 0.0 {
                        acc += a * b;
                    }
                }
                *o = acc;
            }
            return Ok(out);
        }
        for i in 0..n {
            let out_row = &mut out.data[i * m..(i + 1) * m];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[k * m..(k + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    fn zip_with(&self, rhs: &Self, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape() != rhs.shape() {
            return Err(shape_err(
                op,
                format!(
                    "{}x{} vs {}x{}",
                    self.rows, self.cols, rhs.rows, rhs.cols
                ),
            ));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, "hadamard", |a, b| a * b)
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|x| c * x)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// `self += alpha · x`.
    pub fn axpy(&mut self, alpha: f64, x: &Self) -> Result<()> {
        if self.shape() != x.shape() {
            return Err(shape_err(
                "axpy",
                format!("{}x{} vs {}x{}", self.rows, self.cols, x.rows, x.cols),
            ));
        }
        for (y, &xv) in self.data.iter_mut().zip(&x.data) {
            *y += alpha * xv;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Largest `|self_ij − self_ji|`; zero means exactly symmetric.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols.min(self.rows) {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// `(A + Aᵀ) / 2`, exactly symmetric.
    pub fn symmetrized(&self) -> Self {
        let n = self.rows;
        let mut out = self.clone();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// A point in `R^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(data: Vec<f64>) -> Self {
        Self(data)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Copies into an `n x 1` matrix.
    pub fn to_column(&self) -> DenseMatrix {
        DenseMatrix::column(self.0.clone())
    }

    /// Reads an `n x 1` or `1 x n` matrix.
    pub fn from_matrix(m: &DenseMatrix) -> Result<Self> {
        if m.cols() != 1 && m.rows() != 1 {
            return Err(shape_err("from_matrix", format!("{}x{} is not a vector", m.rows(), m.cols())));
        }
        Ok(Self(m.as_slice().to_vec()))
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn squared_distance(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Index<usize> for DenseVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for DenseVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    a.matmul(b)
}

pub fn transpose(a: &DenseMatrix) -> DenseMatrix {
    a.transpose()
}

/// `y += alpha · x`.
pub fn axpy(alpha: f64, x: &DenseMatrix, y: &mut DenseMatrix) -> Result<()> {
    y.axpy(alpha, x)
}

/// Checks symmetry within [`SYMMETRY_TOL`] and returns the symmetrized copy.
pub fn require_symmetric(a: &DenseMatrix) -> Result<DenseMatrix> {
    if !a.is_square() {
        return Err(shape_err("symmetric", format!("{}x{} is not square", a.rows(), a.cols())));
    }
    let n = a.rows();
    let mut worst = 0.0f64;
    let mut bad = false;
    for i in 0..n {
        for j in (i + 1)..n {
            let (x, y) = (a[(i, j)], a[(j, i)]);
            let diff = (x - y).abs();
            let scale = 1.0f64.max(x.abs()).max(y.abs());
            if !(diff <= SYMMETRY_TOL * scale) {
                bad = true;
            }
            worst = worst.max(diff);
        }
    }
    if bad {
        return Err(Error::NotSymmetric(worst));
    }
    Ok(a.symmetrized())
}

/// Lower Cholesky factor `L` with `L·Lᵀ = A`.
pub fn cholesky(a: &DenseMatrix) -> Result<DenseMatrix> {
    let a = require_symmetric(a)?;
    let n = a.rows();
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err(Error::NotPositiveDefinite { index: j, pivot });
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// `log det A` from an existing Cholesky factor.
pub fn logdet_from_cholesky(l: &DenseMatrix) -> f64 {
    2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// `log det A` for symmetric positive definite `A`.
pub fn logdet_spd(a: &DenseMatrix) -> Result<f64> {
    Ok(logdet_from_cholesky(&cholesky(a)?))
}

/// Solves `L·X = B` for lower-triangular `L`.
pub fn solve_lower(l: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let n = l.rows();
    if !l.is_square() || b.rows() != n {
        return Err(shape_err(
            "solve_lower",
            format!("L {}x{}, B {}x{}", l.rows(), l.cols(), b.rows(), b.cols()),
        ));
    }
    let m = b.cols();
    let mut x = b.clone();
    for i in 0..n {
        let d = l[(i, i)];
        if d == 0.0 {
            return Err(Error::SingularMatrix(i));
        }
        for c in 0..m {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / d;
        }
    }
    Ok(x)
}

/// Solves `U·X = B` for upper-triangular `U`.
pub fn solve_upper(u: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let n = u.rows();
    if !u.is_square() || b.rows() != n {
        return Err(shape_err(
            "solve_upper",
            format!("U {}x{}, B {}x{}", u.rows(), u.cols(), b.rows(), b.cols()),
        ));
    }
    let m = b.cols();
    let mut x = b.clone();
    for i in (0..n).rev() {
        let d = u[(i, i)];
        if d == 0.0 {
            return Err(Error::SingularMatrix(i));
        }
        for c in 0..m {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= u[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / d;
        }
    }
    Ok(x)
}

/// `A⁻¹ = L⁻ᵀ·L⁻¹` given the Cholesky factor of `A`. Exactly symmetric.
pub fn spd_inverse_from_cholesky(l: &DenseMatrix) -> Result<DenseMatrix> {
    let linv = solve_lower(l, &DenseMatrix::identity(l.rows()))?;
    linv.transpose().matmul(&linv)
}

/// `a·bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.cols {
        return Err(shape_err(
            "matmul_nt",
            format!("{}x{} times ({}x{})ᵀ", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let (n, m, k) = (a.rows, b.rows, a.cols);
    let mut out = DenseMatrix::zeros(n, m);
    for i in 0..n {
        let ar = &a.data[i * k..(i + 1) * k];
        for j in 0..m {
            let br = &b.data[j * k..(j + 1) * k];
            out.data[i * m + j] = ar.iter().zip(br).map(|(x, y)| x * y).sum();
        }
    }
    Ok(out)
}

/// `aᵀ·b` without materializing the transpose.
pub fn matmul_tn(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows != b.rows {
        return Err(shape_err(
            "matmul_tn",
            format!("({}x{})ᵀ times {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let (n, m) = (a.cols, b.cols);
    let mut out = DenseMatrix::zeros(n, m);
    for r in 0..a.rows {
        let br = &b.data[r * m..(r + 1) * m];
        for i in 0..n {
            let x = a.data[r * n + i];
            if x == 0.0 {
                continue;
            }
            for (o, &y) in out.data[i * m..(i + 1) * m].iter_mut().zip(br) {
                *o += x * y;
            }
        }
    }
    Ok(out)
}

/// `Wᵀ·diag(s)·W` for `W: k x d`, `s: k x 1`. Only the upper triangle is
/// accumulated; the lower triangle is a mirror, so the result is exactly
/// symmetric.
pub fn weighted_gram(w: &DenseMatrix, s: &DenseMatrix) -> Result<DenseMatrix> {
    let (k, d) = w.shape();
    if s.len() != k {
        return Err(shape_err(
            "weighted_gram",
            format!("W {k}x{d} with {} weights", s.len()),
        ));
    }
    let mut g = DenseMatrix::zeros(d, d);
    for r in 0..k {
        let sr = s.as_slice()[r];
        if sr == 0.0 {
            continue;
        }
        let row = w.row(r);
        for a in 0..d {
            let wa = row[a] * sr;
            if wa == 0.0 {
                continue;
            }
            for b in a..d {
                g.data[a * d + b] += wa * row[b];
            }
        }
    }
    for a in 0..d {
        for b in (a + 1)..d {
            g.data[b * d + a] = g.data[a * d + b];
        }
    }
    Ok(g)
}

#[derive(Clone, Debug)]
pub struct SymEig {
    /// Ascending.
    pub values: DenseVector,
    /// Column `k` is the unit eigenvector for `values[k]`.
    pub vectors: DenseMatrix,
}

pub fn sym_eig(a: &DenseMatrix) -> Result<SymEig> {
    sym_eig_with_limit(a, DEFAULT_JACOBI_SWEEPS)
}

/// Cyclic Jacobi eigendecomposition with an explicit sweep budget.
pub fn sym_eig_with_limit(a: &DenseMatrix, max_sweeps: usize) -> Result<SymEig> {
    let mut a = require_symmetric(a)?;
    let n = a.rows();
    let mut v = DenseMatrix::identity(n);
    let scale = a.frobenius_norm();
    let target = (1e-15 * scale).powi(2);

    let off_diag = |a: &DenseMatrix| {
        let mut s = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                s += a[(p, q)] * a[(p, q)];
            }
        }
        s
    };

    let mut converged = off_diag(&a) <= target;
    let mut sweeps = 0;
    while !converged {
        if sweeps == max_sweeps {
            return Err(Error::NoConvergence(max_sweeps));
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (a[(p, p)], a[(q, q)]);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                a[(p, p)] = app - t * apq;
                a[(q, q)] = aqq + t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    let new_p = c * akp - s * akq;
                    let new_q = s * akp + c * akq;
                    a[(k, p)] = new_p;
                    a[(p, k)] = new_p;
                    a[(k, q)] = new_q;
                    a[(q, k)] = new_q;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        converged = off_diag(&a) <= target;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = DenseVector::new(order.iter().map(|&i| a[(i, i)]).collect());
    let mut vectors = DenseMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok(SymEig { values, vectors })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DenseMatrix) -> Result<f64> {
    let eig = sym_eig(a)?;
    Ok(eig.values.as_slice().first().copied().unwrap_or(f64::INFINITY))
}

/// `A^{-1/2}` for symmetric positive definite `A`, via the eigendecomposition.
pub fn inv_sqrt_spd(a: &DenseMatrix) -> Result<DenseMatrix> {
    let SymEig { values, vectors } = sym_eig(a)?;
    let n = values.dim();
    for (i, &lambda) in values.as_slice().iter().enumerate() {
        if !(lambda > 1e-12) {
            return Err(Error::NotPositiveDefinite {
                index: i,
                pivot: lambda,
            });
        }
    }
    let mut scaled = vectors.clone();
    for k in 0..n {
        let f = 1.0 / values[k].sqrt();
        for r in 0..n {
            scaled[(r, k)] *= f;
        }
    }
    Ok(scaled.matmul(&vectors.transpose())?.symmetrized())
}
