//! Dense row-major matrices, GeMM variants, column reductions and SVD.
//!
//! All arithmetic is `f64`. Quantization is emulated on top of this type, so
//! the reference paths here stay free of low-precision accumulation error.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::rng;

/// Products below this many multiply-adds run on the calling thread.
const PAR_THRESHOLD: usize = 1 << 18;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting empty shapes, length
    /// mismatches and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(contract(format!("matrix shape must be positive, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                op: "Matrix::new",
                detail: format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { rows, cols, data })
    }

    /// Internal constructor for results of arithmetic on valid matrices.
    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_parts(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_parts(rows, cols, data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::DimensionMismatch {
                op: "Matrix::from_rows",
                detail: "ragged rows".into(),
            });
        }
        Self::new(r, c, rows.concat())
    }

    /// `1 · vᵀ` with `rows` copies of `v`.
    pub fn broadcast_row(rows: usize, v: &[f64]) -> Self {
        let mut data = Vec::with_capacity(rows * v.len());
        for _ in 0..rows {
            data.extend_from_slice(v);
        }
        Self::from_parts(rows, v.len(), data)
    }

    /// Outer product `a bᵀ`.
    pub fn outer(a: &[f64], b: &[f64]) -> Self {
        Self::from_fn(a.len(), b.len(), |i, j| a[i] * b[j])
    }

    /// I.i.d. standard normal entries scaled by `sigma`.
    pub fn gaussian(rows: usize, cols: usize, sigma: f64, rng: &mut rng::Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect();
        Self::from_parts(rows, cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Matrix) -> Result<f64> {
        self.same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|v| c * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Self::from_parts(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.same_shape(other, op)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self::from_parts(self.rows, self.cols, data))
    }

    /// Adds `v` to every row in place.
    pub fn add_row_broadcast(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.cols, "broadcast vector length");
        for row in self.data.chunks_mut(self.cols) {
            for (x, &b) in row.iter_mut().zip(v) {
                *x += b;
            }
        }
    }

    /// Sub-matrix of the first `k` columns.
    pub fn leading_cols(&self, k: usize) -> Matrix {
        Self::from_fn(self.rows, k, |i, j| self.get(i, j))
    }

    fn same_shape(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                op,
                detail: format!("{:?} vs {:?}", self.shape(), other.shape()),
            });
        }
        Ok(())
    }
}

/// `a · b`.
pub fn gemm(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::DimensionMismatch {
            op: "gemm",
            detail: format!("{}x{} * {}x{}", a.rows, a.cols, b.rows, b.cols),
        });
    }
    let av = Operand { data: &a.data, rs: a.cols, cs: 1 };
    let bv = Operand { data: &b.data, rs: b.cols, cs: 1 };
    Ok(Matrix::from_parts(a.rows, b.cols, strided_gemm(a.rows, a.cols, b.cols, av, bv)))
}

/// `aᵀ · b`.
pub fn gemm_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::DimensionMismatch {
            op: "gemm_tn",
            detail: format!("({}x{})ᵀ * {}x{}", a.rows, a.cols, b.rows, b.cols),
        });
    }
    let av = Operand { data: &a.data, rs: 1, cs: a.cols };
    let bv = Operand { data: &b.data, rs: b.cols, cs: 1 };
    Ok(Matrix::from_parts(a.cols, b.cols, strided_gemm(a.cols, a.rows, b.cols, av, bv)))
}

/// `a · bᵀ`.
pub fn gemm_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::DimensionMismatch {
            op: "gemm_nt",
            detail: format!("{}x{} * ({}x{})ᵀ", a.rows, a.cols, b.rows, b.cols),
        });
    }
    let av = Operand { data: &a.data, rs: a.cols, cs: 1 };
    let bv = Operand { data: &b.data, rs: 1, cs: b.cols };
    Ok(Matrix::from_parts(a.rows, b.rows, strided_gemm(a.rows, a.cols, b.rows, av, bv)))
}

#[derive(Clone, Copy)]
struct Operand<'a> {
    data: &'a [f64],
    rs: usize,
    cs: usize,
}

/// Rows handed to one task; the reduction order over the inner dimension
/// does not depend on this split.
const ROW_PANEL: usize = 64;

/// `(m × k) · (k × n)` for strided operands, row-major output.
fn strided_gemm(m: usize, k: usize, n: usize, a: Operand, b: Operand) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    debug_assert!(a.data.len() > (m - 1) * a.rs + (k - 1) * a.cs);
    debug_assert!(b.data.len() > (k - 1) * b.rs + (n - 1) * b.cs);
    let panel = |(pi, c): (usize, &mut [f64])| {
        let rows = c.len() / n;
        let a_off = pi * ROW_PANEL * a.rs;
        // SAFETY: the row panel starts inside `a` and the asserted bounds
        // cover every (row, inner) offset reached from it; `c` holds exactly
        // `rows × n` outputs with row stride `n`.
        unsafe {
            matrixmultiply::dgemm(
                rows,
                k,
                n,
                1.0,
                a.data.as_ptr().add(a_off),
                a.rs as isize,
                a.cs as isize,
                b.data.as_ptr(),
                b.rs as isize,
                b.cs as isize,
                0.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(ROW_PANEL * n).enumerate().for_each(panel);
    } else {
        out.chunks_mut(ROW_PANEL * n).enumerate().for_each(panel);
    }
    out
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `vᵀ · b` for a vector `v` of length `b.rows`.
pub fn vec_mat(v: &[f64], b: &Matrix) -> Result<Vec<f64>> {
    if v.len() != b.rows {
        return Err(Error::DimensionMismatch {
            op: "vec_mat",
            detail: format!("len {} * {}x{}", v.len(), b.rows, b.cols),
        });
    }
    let mut out = vec![0.0; b.cols];
    for (p, &vp) in v.iter().enumerate() {
        axpy(vp, b.row(p), &mut out);
    }
    Ok(out)
}

/// `v · bᵀ`, i.e. `b · v` read as a row vector.
pub fn vec_mat_t(v: &[f64], b: &Matrix) -> Result<Vec<f64>> {
    if v.len() != b.cols {
        return Err(Error::DimensionMismatch {
            op: "vec_mat_t",
            detail: format!("len {} * ({}x{})ᵀ", v.len(), b.rows, b.cols),
        });
    }
    Ok((0..b.rows).map(|i| dot(b.row(i), v)).collect())
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn column_sums(x: &Matrix) -> Vec<f64> {
    let mut sums = vec![0.0; x.cols];
    for row in x.data.chunks(x.cols) {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    sums
}

/// Feature-wise mean `μ = Xᵀ1 / l`.
pub fn column_mean(x: &Matrix) -> Vec<f64> {
    let l = x.rows as f64;
    column_sums(x).into_iter().map(|s| s / l).collect()
}

/// `X − 1μᵀ`.
pub fn center(x: &Matrix) -> Matrix {
    let mu = column_mean(x);
    let mut out = x.clone();
    for row in out.data.chunks_mut(x.cols) {
        for (v, m) in row.iter_mut().zip(&mu) {
            *v -= m;
        }
    }
    out
}

/// Rank-`k` factorization `u · diag(s) · vᵀ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedSvd {
    /// `l × k` left singular vectors.
    pub u: Matrix,
    /// Singular values, descending.
    pub s: Vec<f64>,
    /// `m × k` right singular vectors.
    pub v: Matrix,
    pub k: usize,
}

impl TruncatedSvd {
    pub fn reconstruct(&self) -> Matrix {
        let us = Matrix::from_fn(self.u.rows, self.k, |i, j| self.u.get(i, j) * self.s[j]);
        gemm_nt(&us, &self.v).expect("svd factors have consistent shapes")
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        (0..self.k).map(|t| self.u.get(i, t) * self.s[t] * self.v.get(j, t)).sum()
    }

    pub fn energy(&self) -> f64 {
        self.s.iter().map(|s| s * s).sum()
    }
}

/// Tuning for [`truncated_svd_with`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvdOptions {
    pub oversampling: usize,
    /// Power iterations always performed before convergence is checked.
    pub power_iters: usize,
    /// Stop once the top-k singular values change by at most this relative amount.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SvdOptions {
    fn default() -> Self {
        Self { oversampling: 8, power_iters: 2, tol: 1e-11, max_iters: 400 }
    }
}

pub fn truncated_svd(x: &Matrix, k: usize, seed: u64) -> Result<TruncatedSvd> {
    truncated_svd_with(x, k, seed, SvdOptions::default())
}

/// Randomized subspace iteration followed by an exact Jacobi SVD of the
/// projected matrix.
///
/// The result is always an orthogonal projection of `x` onto a `k`-dim
/// left subspace, so `‖x‖² = ‖UΣVᵀ‖² + ‖x − UΣVᵀ‖²` holds regardless of how
/// far the iteration converged.
pub fn truncated_svd_with(x: &Matrix, k: usize, seed: u64, opts: SvdOptions) -> Result<TruncatedSvd> {
    let r = x.rows.min(x.cols);
    if k == 0 || k > r {
        return Err(contract(format!("truncated_svd rank {k} outside 1..={r}")));
    }
    let p = (k + opts.oversampling).min(r);
    let mut rng = rng::stream(seed, 0x5bd1);
    let omega = Matrix::gaussian(x.cols, p, 1.0, &mut rng);
    let mut q = orthonormalize(&gemm(x, &omega)?);

    let mut prev: Option<Vec<f64>> = None;
    let mut iter = 0;
    loop {
        // Z = XᵀQ shares its singular values with QᵀX.
        let z = gemm_tn(x, &q)?;
        let (zu, zs, zv) = jacobi_svd(&z);
        let top = &zs[..k];
        let settled = prev.as_ref().is_some_and(|p| {
            p.iter().zip(top).all(|(a, b)| (a - b).abs() <= opts.tol * top[0].max(f64::MIN_POSITIVE))
        });
        if (iter >= opts.power_iters && settled) || iter >= opts.max_iters.max(opts.power_iters) {
            // X ≈ Q Zᵀ = (Q zv) diag(zs) zuᵀ
            let u = gemm(&q, &zv)?.leading_cols(k);
            return Ok(TruncatedSvd { u, s: top.to_vec(), v: zu.leading_cols(k), k });
        }
        prev = Some(top.to_vec());
        let qz = orthonormalize(&z);
        q = orthonormalize(&gemm(x, &qz)?);
        iter += 1;
    }
}

/// Thin SVD with all `min(l, m)` modes.
pub fn thin_svd(x: &Matrix) -> TruncatedSvd {
    let r = x.rows.min(x.cols);
    if x.rows >= x.cols {
        let (u, s, v) = jacobi_svd(x);
        TruncatedSvd { u, s, v, k: r }
    } else {
        let (u, s, v) = jacobi_svd(&x.transpose());
        TruncatedSvd { u: v, s, v: u, k: r }
    }
}

/// One-sided Jacobi SVD of a tall matrix (`rows ≥ cols`).
///
/// Returns `(u, s, v)` with `u: rows×cols`, `v: cols×cols`, `s` descending.
/// Columns of `u` for zero singular values are completed to an orthonormal set.
fn jacobi_svd(a: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let (rows, n) = a.shape();
    debug_assert!(rows >= n);
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    for _sweep in 0..80 {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let alpha = dot(&w[i], &w[i]);
                let beta = dot(&w[j], &w[j]);
                let gamma = dot(&w[i], &w[j]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, i, j, c, s);
                rotate(&mut v, i, j, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let sigma: Vec<f64> = w.iter().map(|col| norm(col)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&p, &q| sigma[q].total_cmp(&sigma[p]));

    let smax = sigma.iter().cloned().fold(0.0, f64::max);
    let mut u_cols = Vec::with_capacity(n);
    let mut live = Vec::with_capacity(n);
    for &j in &order {
        let sj = sigma[j];
        if sj > smax * 1e-14 && sj > 0.0 {
            u_cols.push(w[j].iter().map(|x| x / sj).collect::<Vec<_>>());
            live.push(true);
        } else {
            u_cols.push(vec![0.0; rows]);
            live.push(false);
        }
    }
    complete_orthonormal(&mut u_cols, &live);

    let s = order.iter().map(|&j| sigma[j]).collect();
    let u = from_cols(rows, &u_cols);
    let v_sorted: Vec<Vec<f64>> = order.iter().map(|&j| v[j].clone()).collect();
    (u, s, from_cols(n, &v_sorted))
}

fn rotate(cols: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(j);
    for (x, y) in lo[i].iter_mut().zip(hi[0].iter_mut()) {
        let (xi, yj) = (*x, *y);
        *x = c * xi - s * yj;
        *y = s * xi + c * yj;
    }
}

fn from_cols(rows: usize, cols: &[Vec<f64>]) -> Matrix {
    Matrix::from_fn(rows, cols.len(), |i, j| cols[j][i])
}

/// Orthonormal basis for the columns of `y` (same shape), via twice-applied
/// modified Gram-Schmidt. Rank-deficient directions are replaced by
/// canonical vectors orthogonalized against the rest.
pub(crate) fn orthonormalize(y: &Matrix) -> Matrix {
    let mut cols: Vec<Vec<f64>> = (0..y.cols).map(|j| y.col(j)).collect();
    let scale = cols.iter().map(|c| norm(c)).fold(0.0, f64::max);
    let mut live = vec![true; cols.len()];
    for j in 0..cols.len() {
        for _ in 0..2 {
            for p in 0..j {
                if !live[p] {
                    continue;
                }
                let (done, rest) = cols.split_at_mut(j);
                let proj = dot(&done[p], &rest[0]);
                for (x, q) in rest[0].iter_mut().zip(&done[p]) {
                    *x -= proj * q;
                }
            }
        }
        let nj = norm(&cols[j]);
        if nj > 1e-13 * scale && nj > 0.0 {
            cols[j].iter_mut().for_each(|x| *x /= nj);
        } else {
            live[j] = false;
        }
    }
    complete_orthonormal(&mut cols, &live);
    from_cols(y.rows, &cols)
}

/// Fills the non-`live` columns with unit vectors orthogonal to all others.
fn complete_orthonormal(cols: &mut [Vec<f64>], live: &[bool]) {
    let dim = cols.first().map_or(0, Vec::len);
    let mut next_basis = 0;
    let mut filled = live.to_vec();
    for j in 0..cols.len() {
        if filled[j] {
            continue;
        }
        while next_basis < dim {
            let mut cand = vec![0.0; dim];
            cand[next_basis] = 1.0;
            next_basis += 1;
            for _ in 0..2 {
                for p in 0..cols.len() {
                    if p == j || !filled[p] {
                        continue;
                    }
                    let proj = dot(&cols[p], &cand);
                    for (x, q) in cand.iter_mut().zip(&cols[p]) {
                        *x -= proj * q;
                    }
                }
            }
            let nc = norm(&cand);
            if nc > 1e-8 {
                cols[j] = cand.into_iter().map(|x| x / nc).collect();
                filled[j] = true;
                break;
            }
        }
    }
}
