//! Dense linear algebra kernels.
//!
//! Everything in this crate runs at desk scale (state dimension ≲ 2·10⁴,
//! observation dimension ≲ 10³), so the kernels are written directly against
//! a row-major dense matrix rather than pulling in an external solver stack:
//! Cholesky and pivoted LU factorisations, a symmetric eigensolver
//! (Householder tridiagonalisation followed by implicit-shift QL), and a
//! one-sided Jacobi SVD. The Jacobi SVD orthogonalises columns of the matrix
//! itself, which keeps small singular values accurate enough for pseudoinverse
//! work — forming the Gram matrix would square the condition number.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Error;
use crate::fmath;
use crate::Result;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r > 0 { rows[0].len() } else { 0 };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn diag(entries: &[f64]) -> Self {
        let mut m = Mat::zeros(entries.len(), entries.len());
        for (i, &v) in entries.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// n×n matrix `c·I`.
    pub fn scaled_identity(n: usize, c: f64) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = c;
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
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_col(&mut self, j: usize, v: &[f64]) {
        assert_eq!(v.len(), self.rows);
        for i in 0..self.rows {
            self[(i, j)] = v[i];
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul shape");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row_start = i * out.cols;
            for (k, &aik) in a_row.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                let out_row = &mut out.data[out_row_start..out_row_start + b_row.len()];
                for (o, &b) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += aik * b;
                }
            }
        }
        out
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "t_matmul shape");
        let mut out = Mat::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &aki) in a_row.iter().enumerate() {
                if aki == 0.0 {
                    continue;
                }
                let out_row_start = i * out.cols;
                let out_row = &mut out.data[out_row_start..out_row_start + b_row.len()];
                for (o, &b) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += aki * b;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols, "matmul_t shape");
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                out[(i, j)] = dot(a_row, other.row(j));
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec shape");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ · x`.
    pub fn t_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len(), "t_matvec shape");
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += xi * a;
            }
        }
        out
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (o, &b) in out.data.iter_mut().zip(other.data.iter()) {
            *o += b;
        }
        out
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (o, &b) in out.data.iter_mut().zip(other.data.iter()) {
            *o -= b;
        }
        out
    }

    pub fn scale(&self, c: f64) -> Mat {
        let mut out = self.clone();
        for o in out.data.iter_mut() {
            *o *= c;
        }
        out
    }

    /// Replaces the matrix by `(A + Aᵀ)/2`.
    pub fn symmetrize(&mut self) {
        assert_eq!(self.rows, self.cols);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }

    /// `max_{ij} |A_ij − A_ji| / max(max_{ij}|A_ij|, floor)`.
    pub fn relative_asymmetry(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max(fmath::abs(self[(i, j)] - self[(j, i)]));
            }
        }
        worst / scale
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, &v| m.max(fmath::abs(v)))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        fmath::sqrt(self.data.iter().map(|&v| v * v).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl core::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

// ---------------------------------------------------------------------------
// vector helpers
// ---------------------------------------------------------------------------

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    fmath::sqrt(dot(a, a))
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, &v| m.max(fmath::abs(v)))
}

pub fn sub_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(&x, &y)| x - y).collect()
}

pub fn add_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(&x, &y)| x + y).collect()
}

pub fn scale_vec(a: &[f64], c: f64) -> Vec<f64> {
    a.iter().map(|&x| c * x).collect()
}

// ---------------------------------------------------------------------------
// Cholesky
// ---------------------------------------------------------------------------

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = A`.
///
/// Fails with [`Error::NotPositiveDefinite`] on a nonpositive pivot.
pub fn cholesky(a: &Mat) -> Result<Mat> {
    assert_eq!(a.rows(), a.cols(), "cholesky needs a square matrix");
    let n = a.rows();
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::NotPositiveDefinite {
                detail: "nonpositive Cholesky pivot",
            });
        }
        let ljj = fmath::sqrt(d);
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `L y = b` for lower-triangular `L`.
pub fn forward_substitute(l: &Mat, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = b.to_vec();
    for i in 0..n {
        let row = l.row(i);
        let mut s = y[i];
        for k in 0..i {
            s -= row[k] * y[k];
        }
        y[i] = s / row[i];
    }
    y
}

/// Solves `Lᵀ x = b` for lower-triangular `L`.
pub fn back_substitute_transposed(l: &Mat, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solves `A x = b` given the Cholesky factor `L` of `A`.
pub fn chol_solve(l: &Mat, b: &[f64]) -> Vec<f64> {
    back_substitute_transposed(l, &forward_substitute(l, b))
}

/// Solves `A X = B` column-by-column given the Cholesky factor `L` of `A`.
pub fn chol_solve_mat(l: &Mat, b: &Mat) -> Mat {
    let mut out = Mat::zeros(b.rows(), b.cols());
    for j in 0..b.cols() {
        out.set_col(j, &chol_solve(l, &b.col(j)));
    }
    out
}

/// `ln det A` from the Cholesky factor of `A`.
pub fn chol_log_det(l: &Mat) -> f64 {
    (0..l.rows()).map(|i| 2.0 * fmath::ln(l[(i, i)])).sum()
}

// ---------------------------------------------------------------------------
// pivoted LU (for the nonsymmetric time-step blocks)
// ---------------------------------------------------------------------------

/// LU factorisation with partial pivoting, stored packed.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Mat,
    perm: Vec<usize>,
}

pub fn lu_factor(a: &Mat) -> Result<Lu> {
    assert_eq!(a.rows(), a.cols(), "lu needs a square matrix");
    let n = a.rows();
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut p = k;
        let mut pmax = fmath::abs(lu[(k, k)]);
        for i in (k + 1)..n {
            let v = fmath::abs(lu[(i, k)]);
            if v > pmax {
                pmax = v;
                p = i;
            }
        }
        if pmax == 0.0 || !pmax.is_finite() {
            return Err(Error::SingularMatrix {
                context: "lu_factor",
            });
        }
        if p != k {
            for j in 0..n {
                let tmp = lu[(k, j)];
                lu[(k, j)] = lu[(p, j)];
                lu[(p, j)] = tmp;
            }
            perm.swap(k, p);
        }
        let pivot = lu[(k, k)];
        for i in (k + 1)..n {
            let m = lu[(i, k)] / pivot;
            lu[(i, k)] = m;
            if m == 0.0 {
                continue;
            }
            for j in (k + 1)..n {
                let v = m * lu[(k, j)];
                lu[(i, j)] -= v;
            }
        }
    }
    Ok(Lu { lu, perm })
}

impl Lu {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.rows();
        debug_assert_eq!(b.len(), n);
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b[self.perm[i]];
            let row = self.lu.row(i);
            for k in 0..i {
                s -= row[k] * y[k];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= row[k] * y[k];
            }
            y[i] = s / row[i];
        }
        y
    }
}

// ---------------------------------------------------------------------------
// symmetric eigensolver
// ---------------------------------------------------------------------------

/// Eigenvalues (ascending) and matching orthonormal eigenvectors (columns).
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Mat,
}

/// Full eigendecomposition of a symmetric matrix: Householder
/// tridiagonalisation followed by implicit-shift QL iteration.
pub fn sym_eigen(a: &Mat) -> Result<SymEigen> {
    assert_eq!(a.rows(), a.cols(), "sym_eigen needs a square matrix");
    let n = a.rows();
    if n == 0 {
        return Ok(SymEigen {
            values: Vec::new(),
            vectors: Mat::zeros(0, 0),
        });
    }
    let mut z = a.clone();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(&mut z, &mut d, &mut e);
    ql_implicit(&mut d, &mut e, &mut z)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].partial_cmp(&d[j]).expect("NaN eigenvalue"));
    let values: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (newj, &oldj) in order.iter().enumerate() {
        for i in 0..n {
            vectors[(i, newj)] = z[(i, oldj)];
        }
    }
    Ok(SymEigen { values, vectors })
}

/// Householder reduction to tridiagonal form, accumulating the orthogonal
/// transform in `z` (on entry: the symmetric matrix; on exit: Q).
fn tridiagonalize(z: &mut Mat, d: &mut [f64], e: &mut [f64]) {
    let n = z.rows();
    for i in (1..n).rev() {
        let l = i;
        let mut h = 0.0;
        if l > 1 {
            let mut scale = 0.0;
            for k in 0..l {
                scale += fmath::abs(z[(i, k)]);
            }
            if scale == 0.0 {
                e[i] = z[(i, l - 1)];
            } else {
                for k in 0..l {
                    z[(i, k)] /= scale;
                    h += z[(i, k)] * z[(i, k)];
                }
                let mut f = z[(i, l - 1)];
                let g = if f >= 0.0 {
                    -fmath::sqrt(h)
                } else {
                    fmath::sqrt(h)
                };
                e[i] = scale * g;
                h -= f * g;
                z[(i, l - 1)] = f - g;
                f = 0.0;
                for j in 0..l {
                    z[(j, i)] = z[(i, j)] / h;
                    let mut g = 0.0;
                    for k in 0..=j {
                        g += z[(j, k)] * z[(i, k)];
                    }
                    for k in (j + 1)..l {
                        g += z[(k, j)] * z[(i, k)];
                    }
                    e[j] = g / h;
                    f += e[j] * z[(i, j)];
                }
                let hh = f / (h + h);
                for j in 0..l {
                    let f = z[(i, j)];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        let upd = f * e[k] + g * z[(i, k)];
                        z[(j, k)] -= upd;
                    }
                }
            }
        } else {
            e[i] = z[(i, l - 1)];
        }
        d[i] = h;
    }
    d[0] = 0.0;
    e[0] = 0.0;
    for i in 0..n {
        if d[i] != 0.0 {
            for j in 0..i {
                let mut g = 0.0;
                for k in 0..i {
                    g += z[(i, k)] * z[(k, j)];
                }
                for k in 0..i {
                    let upd = g * z[(k, i)];
                    z[(k, j)] -= upd;
                }
            }
        }
        d[i] = z[(i, i)];
        z[(i, i)] = 1.0;
        for j in 0..i {
            z[(j, i)] = 0.0;
            z[(i, j)] = 0.0;
        }
    }
}

/// Implicit-shift QL iteration on the tridiagonal (d, e), rotating `z`.
fn ql_implicit(d: &mut [f64], e: &mut [f64], z: &mut Mat) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = fmath::abs(d[m]) + fmath::abs(d[m + 1]);
                if fmath::abs(e[m]) <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 50 {
                return Err(Error::SingularMatrix {
                    context: "sym_eigen QL iteration failed to converge",
                });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = fmath::hypot(g, 1.0);
            g = d[m] - d[l]
                + e[l]
                    / (g + if g >= 0.0 {
                        fmath::abs(r)
                    } else {
                        -fmath::abs(r)
                    });
            let (mut s, mut c) = (1.0, 1.0);
            let mut p = 0.0;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = fmath::hypot(f, g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    f = z[(k, i + 1)];
                    z[(k, i + 1)] = s * z[(k, i)] + c * f;
                    z[(k, i)] = c * z[(k, i)] - s * f;
                }
            }
            if r == 0.0 && m > l {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// one-sided Jacobi SVD and pseudoinverse
// ---------------------------------------------------------------------------

/// Thin SVD `A = U diag(s) Vᵀ`, singular values descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Mat,
    pub s: Vec<f64>,
    pub v: Mat,
}

/// One-sided Jacobi (Hestenes) SVD.
pub fn svd(a: &Mat) -> Svd {
    if a.rows() < a.cols() {
        let t = svd(&a.transpose());
        return Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        };
    }
    let m = a.rows();
    let n = a.cols();
    let mut b = a.clone();
    let mut v = Mat::identity(n);
    let tol = 1e-15;
    let max_sweeps = 60;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..m {
                    let bp = b[(i, p)];
                    let bq = b[(i, q)];
                    alpha += bp * bp;
                    beta += bq * bq;
                    gamma += bp * bq;
                }
                if fmath::abs(gamma) <= tol * fmath::sqrt(alpha * beta) || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = {
                    let sign = if zeta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (fmath::abs(zeta) + fmath::sqrt(1.0 + zeta * zeta))
                };
                let c = 1.0 / fmath::sqrt(1.0 + t * t);
                let s = c * t;
                for i in 0..m {
                    let bp = b[(i, p)];
                    let bq = b[(i, q)];
                    b[(i, p)] = c * bp - s * bq;
                    b[(i, q)] = s * bp + c * bq;
                }
                for i in 0..n {
                    let vp = v[(i, p)];
                    let vq = v[(i, q)];
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut s: Vec<f64> = (0..n).map(|j| norm2(&b.col(j))).collect();
    let mut u = Mat::zeros(m, n);
    for j in 0..n {
        if s[j] > 0.0 {
            for i in 0..m {
                u[(i, j)] = b[(i, j)] / s[j];
            }
        }
    }
    // sort descending
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).expect("NaN singular value"));
    if order.iter().enumerate().any(|(k, &o)| k != o) {
        let mut u2 = Mat::zeros(m, n);
        let mut v2 = Mat::zeros(n, n);
        let mut s2 = vec![0.0; n];
        for (newj, &oldj) in order.iter().enumerate() {
            s2[newj] = s[oldj];
            for i in 0..m {
                u2[(i, newj)] = u[(i, oldj)];
            }
            for i in 0..n {
                v2[(i, newj)] = v[(i, oldj)];
            }
        }
        u = u2;
        v = v2;
        s = s2;
    }
    Svd { u, s, v }
}

/// Moore–Penrose pseudoinverse via SVD. Singular values below
/// `tol · σ_max` are treated as zero.
pub fn pseudoinverse(a: &Mat, tol: f64) -> Mat {
    assert!(tol > 0.0, "pseudoinverse cutoff must be positive");
    let Svd { u, s, v } = svd(a);
    let smax = s.first().copied().unwrap_or(0.0);
    let cutoff = tol * smax;
    // A⁺ = V diag(1/s) Uᵀ, truncated
    let mut out = Mat::zeros(a.cols(), a.rows());
    for (k, &sk) in s.iter().enumerate() {
        if sk <= cutoff || sk == 0.0 {
            continue;
        }
        let inv = 1.0 / sk;
        for i in 0..a.cols() {
            let vik = v[(i, k)] * inv;
            if vik == 0.0 {
                continue;
            }
            for j in 0..a.rows() {
                out[(i, j)] += vik * u[(j, k)];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_mat(rng: &mut Rng, m: usize, n: usize) -> Mat {
        Mat::from_fn(m, n, |_, _| rng.standard_normal())
    }

    fn random_spd(rng: &mut Rng, n: usize) -> Mat {
        let b = random_mat(rng, n, n);
        let mut a = b.matmul_t(&b);
        for i in 0..n {
            a[(i, i)] += n as f64;
        }
        a.symmetrize();
        a
    }

    #[test]
    fn cholesky_reconstructs() {
        let mut rng = Rng::new(1);
        for n in [1usize, 2, 5, 12] {
            let a = random_spd(&mut rng, n);
            let l = cholesky(&a).unwrap();
            let rec = l.matmul_t(&l);
            let err = rec.sub(&a).max_abs() / a.max_abs();
            assert!(err < 1e-12, "n={n} err={err}");
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Mat::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(cholesky(&a).is_err());
    }

    #[test]
    fn chol_solve_roundtrip() {
        let mut rng = Rng::new(2);
        let a = random_spd(&mut rng, 8);
        let l = cholesky(&a).unwrap();
        let x: Vec<f64> = (0..8).map(|i| i as f64 - 3.0).collect();
        let b = a.matvec(&x);
        let xs = chol_solve(&l, &b);
        for (xi, xsi) in x.iter().zip(xs.iter()) {
            assert!((xi - xsi).abs() < 1e-10);
        }
    }

    #[test]
    fn lu_solves_nonsymmetric() {
        let mut rng = Rng::new(3);
        let a = random_mat(&mut rng, 9, 9);
        let lu = lu_factor(&a).unwrap();
        let x: Vec<f64> = (0..9).map(|i| (i as f64).sin()).collect();
        let b = a.matvec(&x);
        let xs = lu.solve(&b);
        for (xi, xsi) in x.iter().zip(xs.iter()) {
            assert!((xi - xsi).abs() < 1e-9);
        }
    }

    #[test]
    fn lu_rejects_singular() {
        let a = Mat::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert!(lu_factor(&a).is_err());
    }

    #[test]
    fn eigen_reconstructs_and_is_orthonormal() {
        let mut rng = Rng::new(4);
        for n in [1usize, 2, 3, 7, 20] {
            let a = random_spd(&mut rng, n);
            let SymEigen { values, vectors } = sym_eigen(&a).unwrap();
            // Q Λ Qᵀ = A
            let lam = Mat::diag(&values);
            let rec = vectors.matmul(&lam).matmul_t(&vectors);
            let err = rec.sub(&a).max_abs() / a.max_abs();
            assert!(err < 1e-10, "n={n} reconstruction err={err}");
            // QᵀQ = I
            let qtq = vectors.t_matmul(&vectors);
            let id_err = qtq.sub(&Mat::identity(n)).max_abs();
            assert!(id_err < 1e-12, "n={n} orthonormality err={id_err}");
            // ascending
            for w in values.windows(2) {
                assert!(w[0] <= w[1] + 1e-12);
            }
        }
    }

    #[test]
    fn eigen_known_values() {
        // eigenvalues of [[2,1],[1,2]] are 1 and 3
        let a = Mat::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]);
        let e = sym_eigen(&a).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-12);
        assert!((e.values[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn svd_reconstructs() {
        let mut rng = Rng::new(5);
        for (m, n) in [(1usize, 1usize), (4, 4), (9, 3), (3, 9), (20, 7)] {
            let a = random_mat(&mut rng, m, n);
            let Svd { u, s, v } = svd(&a);
            let rec = u.matmul(&Mat::diag(&s)).matmul_t(&v);
            let err = rec.sub(&a).max_abs() / a.max_abs();
            assert!(err < 1e-11, "({m},{n}) err={err}");
            for w in s.windows(2) {
                assert!(w[0] >= w[1] - 1e-14);
            }
        }
    }

    #[test]
    fn pseudoinverse_penrose_identities() {
        let mut rng = Rng::new(6);
        for (m, n) in [(6usize, 3usize), (3, 6), (5, 5), (10, 4)] {
            let a = random_mat(&mut rng, m, n);
            let p = pseudoinverse(&a, 1e-12);
            let apa = a.matmul(&p).matmul(&a);
            let pap = p.matmul(&a).matmul(&p);
            let scale = a.max_abs();
            assert!(apa.sub(&a).max_abs() / scale < 1e-10, "A P A = A");
            assert!(pap.sub(&p).max_abs() / p.max_abs() < 1e-10, "P A P = P");
            let ap = a.matmul(&p);
            let pa = p.matmul(&a);
            assert!(ap.sub(&ap.transpose()).max_abs() / ap.max_abs().max(1e-300) < 1e-10);
            assert!(pa.sub(&pa.transpose()).max_abs() / pa.max_abs().max(1e-300) < 1e-10);
        }
    }

    #[test]
    fn pseudoinverse_full_rank_tall_is_left_inverse() {
        let mut rng = Rng::new(7);
        let a = random_mat(&mut rng, 6, 3);
        let p = pseudoinverse(&a, 1e-12);
        let pa = p.matmul(&a);
        assert!(pa.sub(&Mat::identity(3)).max_abs() < 1e-10);
    }

    #[test]
    fn pseudoinverse_rank_deficient_diagonal() {
        let a = Mat::diag(&[2.0, 0.0]);
        let p = pseudoinverse(&a, 1e-12);
        assert!((p[(0, 0)] - 0.5).abs() < 1e-14);
        assert!(p[(1, 1)].abs() < 1e-14);
        assert!(p[(0, 1)].abs() < 1e-14 && p[(1, 0)].abs() < 1e-14);
    }

    #[test]
    fn pseudoinverse_identity() {
        let p = pseudoinverse(&Mat::identity(4), 1e-12);
        assert!(p.sub(&Mat::identity(4)).max_abs() < 1e-13);
    }
}
