//! Gaussian measures, matrix-weighted norms, and linear-Gaussian conditioning.
//!
//! The central objects are [`SpdMatrix`] (a symmetric positive definite
//! matrix carrying its Cholesky factor) and [`GaussianMeasure`]. On top of
//! those sit the closed-form operations the rest of the crate relies on:
//! conditioning a Gaussian prior on linear observations with an optional
//! deterministic shift in the data model, the closed-form Gaussian KL
//! divergence, matrix-norm equivalence constants, and the quadratic-form
//! identities used by the misfit-difference bounds.

use alloc::vec::Vec;

use crate::error::Error;
use crate::fmath;
use crate::linalg::{self, Mat};
use crate::rng::Rng;
use crate::Result;

/// Relative symmetry tolerance accepted at construction.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalues above `−PSD_TOL · ‖A‖` count as nonnegative; smaller ones are
/// a hard failure, in-between ones are clipped to zero by the clipping
/// constructor.
pub const PSD_TOL: f64 = 1e-10;
/// Default relative singular-value cutoff for pseudoinverses.
pub const DEFAULT_PINV_TOL: f64 = 1e-12;

/// Symmetric positive definite matrix with a cached Cholesky factor.
///
/// Construction fails unless the matrix is symmetric to within
/// [`SYMMETRY_TOL`] (relative) and all Cholesky pivots are strictly positive.
/// Instances are immutable, so the factor is computed once up front and the
/// type is freely shareable across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    entries: Mat,
    factor: Mat,
}

impl SpdMatrix {
    /// Builds from a symmetric matrix; the input is symmetrised
    /// (`(A + Aᵀ)/2`) before factorisation to absorb floating-point noise.
    pub fn new(mut entries: Mat) -> Result<Self> {
        if entries.rows() != entries.cols() {
            return Err(Error::DimensionMismatch {
                expected: entries.rows(),
                got: entries.cols(),
                context: "SpdMatrix::new",
            });
        }
        let asym = entries.relative_asymmetry();
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric {
                rel_asymmetry: asym,
            });
        }
        entries.symmetrize();
        let factor = linalg::cholesky(&entries)?;
        Ok(SpdMatrix { entries, factor })
    }

    /// Builds from a nearly-symmetric, nearly-PSD matrix: symmetrises,
    /// clips eigenvalues in `[−PSD_TOL·‖A‖, 0)` to zero, and fails if any
    /// eigenvalue is more negative than that or if the clipped matrix is
    /// not strictly positive definite.
    pub fn from_symmetric_clipped(mut entries: Mat) -> Result<Self> {
        if entries.rows() != entries.cols() {
            return Err(Error::DimensionMismatch {
                expected: entries.rows(),
                got: entries.cols(),
                context: "SpdMatrix::from_symmetric_clipped",
            });
        }
        entries.symmetrize();
        let eig = linalg::sym_eigen(&entries)?;
        let scale = eig
            .values
            .iter()
            .fold(0.0_f64, |m, &v| m.max(fmath::abs(v)));
        let floor = -PSD_TOL * scale;
        if eig.values.iter().any(|&v| v < floor) {
            return Err(Error::NotPositiveDefinite {
                detail: "eigenvalue below the PSD clipping tolerance",
            });
        }
        let clipped: Vec<f64> = eig
            .values
            .iter()
            .map(|&v| if v < 0.0 { 0.0 } else { v })
            .collect();
        let mut rebuilt = eig
            .vectors
            .matmul(&Mat::diag(&clipped))
            .matmul_t(&eig.vectors);
        rebuilt.symmetrize();
        let factor = linalg::cholesky(&rebuilt)?;
        Ok(SpdMatrix {
            entries: rebuilt,
            factor,
        })
    }

    pub fn identity(n: usize) -> Self {
        SpdMatrix {
            entries: Mat::identity(n),
            factor: Mat::identity(n),
        }
    }

    /// `c·I` with `c > 0`.
    pub fn scaled_identity(n: usize, c: f64) -> Result<Self> {
        if !c.is_finite() || c <= 0.0 {
            return Err(Error::NotPositiveDefinite {
                detail: "scaled identity needs a positive scale",
            });
        }
        Ok(SpdMatrix {
            entries: Mat::scaled_identity(n, c),
            factor: Mat::scaled_identity(n, fmath::sqrt(c)),
        })
    }

    pub fn dim(&self) -> usize {
        self.entries.rows()
    }

    pub fn entries(&self) -> &Mat {
        &self.entries
    }

    /// Lower-triangular Cholesky factor `F` with `F Fᵀ = A`.
    pub fn factor(&self) -> &Mat {
        &self.factor
    }

    /// `A⁻¹ b` via the cached factor.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        linalg::chol_solve(&self.factor, b)
    }

    /// `A⁻¹ B` column-wise.
    pub fn solve_mat(&self, b: &Mat) -> Mat {
        linalg::chol_solve_mat(&self.factor, b)
    }

    /// `xᵀ A⁻¹ x ≥ 0`.
    pub fn inv_quad_form(&self, x: &[f64]) -> f64 {
        let y = linalg::forward_substitute(&self.factor, x);
        linalg::dot(&y, &y)
    }

    /// `xᵀ A⁻¹ y`.
    pub fn inv_bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let fx = linalg::forward_substitute(&self.factor, x);
        let fy = linalg::forward_substitute(&self.factor, y);
        linalg::dot(&fx, &fy)
    }

    /// `tr(A⁻¹ B)`.
    pub fn inv_trace_product(&self, b: &Mat) -> f64 {
        self.solve_mat(b).trace()
    }

    pub fn log_det(&self) -> f64 {
        linalg::chol_log_det(&self.factor)
    }

    /// Dense inverse `A⁻¹`, symmetrised.
    pub fn inverse(&self) -> Mat {
        let mut inv = self.solve_mat(&Mat::identity(self.dim()));
        inv.symmetrize();
        inv
    }
}

/// Weight context for the matrix-weighted norm `|a|_L = ⟨a, L a⟩^{1/2}`.
/// Diagonal weights are detected at construction and evaluated in O(n).
#[derive(Debug, Clone)]
pub struct WeightedNorm {
    weight: SpdMatrix,
    diagonal: Option<Vec<f64>>,
}

impl WeightedNorm {
    pub fn new(weight: SpdMatrix) -> Self {
        let n = weight.dim();
        let mut diagonal = Some(Vec::with_capacity(n));
        'scan: for i in 0..n {
            for j in 0..n {
                if i != j && weight.entries()[(i, j)] != 0.0 {
                    diagonal = None;
                    break 'scan;
                }
            }
        }
        if let Some(d) = diagonal.as_mut() {
            for i in 0..n {
                d.push(weight.entries()[(i, i)]);
            }
        }
        WeightedNorm { weight, diagonal }
    }

    pub fn dim(&self) -> usize {
        self.weight.dim()
    }

    pub fn weight(&self) -> &SpdMatrix {
        &self.weight
    }
}

/// `|a|²_L = aᵀ L a`, evaluated through the factor as `|Fᵀa|²` so the result
/// is nonnegative by construction.
pub fn weighted_norm_sq(a: &[f64], w: &WeightedNorm) -> Result<f64> {
    if a.len() != w.dim() {
        return Err(Error::DimensionMismatch {
            expected: w.dim(),
            got: a.len(),
            context: "weighted_norm_sq",
        });
    }
    if let Some(d) = &w.diagonal {
        return Ok(a.iter().zip(d.iter()).map(|(&x, &l)| l * x * x).sum());
    }
    let fta = w.weight.factor().t_matvec(a);
    Ok(linalg::dot(&fta, &fta))
}

/// Checks that a symmetric matrix is PSD to within `PSD_TOL` (relative).
fn check_psd(m: &Mat, context: &'static str) -> Result<()> {
    if m.rows() != m.cols() {
        return Err(Error::DimensionMismatch {
            expected: m.rows(),
            got: m.cols(),
            context,
        });
    }
    let mut sym = m.clone();
    sym.symmetrize();
    let eig = linalg::sym_eigen(&sym)?;
    let scale = eig
        .values
        .iter()
        .fold(1.0_f64, |s, &v| s.max(fmath::abs(v)));
    if eig.values.iter().any(|&v| v < -PSD_TOL * scale) {
        return Err(Error::NotPositiveDefinite { detail: context });
    }
    Ok(())
}

/// Both sides of the quadratic-form difference identity
///
/// `|a|²_{M₁⁻¹} − |a+b|²_{(M₁+M₂)⁻¹}
///    = −⟨b, 2a+b⟩_{M₁⁻¹} + |a+b|²_{M₁⁻¹−(M₁+M₂)⁻¹}`,
///
/// where the last term denotes the difference of the two inverse-weighted
/// quadratic forms. Returns `(lhs, rhs)` so callers can assert equality.
pub fn quadratic_difference_identity(
    a: &[f64],
    b: &[f64],
    m1: &SpdMatrix,
    m2: &Mat,
) -> Result<(f64, f64)> {
    let d = m1.dim();
    if a.len() != d || b.len() != d || m2.rows() != d || m2.cols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: a.len().max(b.len()).max(m2.rows()),
            context: "quadratic_difference_identity",
        });
    }
    check_psd(m2, "quadratic_difference_identity: M₂ must be PSD")?;
    let sum = SpdMatrix::new(m1.entries().add(m2))?;

    let apb = linalg::add_vec(a, b);
    let lhs = m1.inv_quad_form(a) - sum.inv_quad_form(&apb);

    let two_a_plus_b: Vec<f64> = a.iter().zip(b.iter()).map(|(&x, &y)| 2.0 * x + y).collect();
    let cross = m1.inv_bilinear(b, &two_a_plus_b);
    let gap_term = m1.inv_quad_form(&apb) - sum.inv_quad_form(&apb);
    let rhs = -cross + gap_term;
    Ok((lhs, rhs))
}

/// `M₁⁻¹ − (M₁+M₂)⁻¹`, symmetric PSD for PSD `M₂`.
pub fn woodbury_gap(m1: &SpdMatrix, m2: &Mat) -> Result<Mat> {
    let d = m1.dim();
    if m2.rows() != d || m2.cols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: m2.rows(),
            context: "woodbury_gap",
        });
    }
    check_psd(m2, "woodbury_gap: M₂ must be PSD")?;
    let sum = SpdMatrix::new(m1.entries().add(m2))?;
    let mut gap = m1.inverse().sub(&sum.inverse());
    gap.symmetrize();
    Ok(gap)
}

/// `‖A^{-1/2} B^{1/2}‖_op = λ_max(A^{-1/2} B A^{-1/2})^{1/2}` for SPD `A`
/// and PSD `B`, via a symmetric eigensolve of the congruent product.
pub fn weighted_operator_norm(a: &SpdMatrix, b: &Mat) -> Result<f64> {
    let d = a.dim();
    if b.rows() != d || b.cols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: b.rows(),
            context: "weighted_operator_norm",
        });
    }
    // C = F⁻¹ B F⁻ᵀ, column solves then row solves
    let fa = a.factor();
    let mut cols = Mat::zeros(d, d);
    for j in 0..d {
        cols.set_col(j, &linalg::forward_substitute(fa, &b.col(j)));
    }
    let ct = cols.transpose();
    let mut c = Mat::zeros(d, d);
    for j in 0..d {
        c.set_col(j, &linalg::forward_substitute(fa, &ct.col(j)));
    }
    c.symmetrize();
    let eig = linalg::sym_eigen(&c)?;
    let lam_max = eig.values.last().copied().unwrap_or(0.0);
    Ok(fmath::sqrt_clamped(lam_max))
}

/// The norm-equivalence constant
/// `C = ‖Σ_noise^{-1/2} (Σ_noise + OΣ_εO*)^{1/2}‖_op`,
/// which satisfies `|z|_{Σ_noise⁻¹} ≤ C · |z|_{(Σ_noise+OΣ_εO*)⁻¹}` for all z.
pub fn enhanced_noise_constant(sigma_noise: &SpdMatrix, o_sigma_eps_o: &Mat) -> Result<f64> {
    check_psd(o_sigma_eps_o, "enhanced_noise_constant: OΣ_εO* must be PSD")?;
    let sum = sigma_noise.entries().add(o_sigma_eps_o);
    weighted_operator_norm(sigma_noise, &sum)
}

/// Finite-dimensional Gaussian measure `N(mean, cov)`.
#[derive(Debug, Clone)]
pub struct GaussianMeasure {
    mean: Vec<f64>,
    cov: SpdMatrix,
}

impl GaussianMeasure {
    pub fn new(mean: Vec<f64>, cov: SpdMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::DimensionMismatch {
                expected: cov.dim(),
                got: mean.len(),
                context: "GaussianMeasure::new",
            });
        }
        Ok(GaussianMeasure { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &SpdMatrix {
        &self.cov
    }

    /// One draw `mean + F ξ` with `ξ` standard normal.
    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let mut xi = alloc::vec![0.0; self.dim()];
        rng.fill_standard_normal(&mut xi);
        let fxi = self.cov.factor().matvec(&xi);
        linalg::add_vec(&self.mean, &fxi)
    }

    /// Independent product measure on the stacked space: block-diagonal
    /// covariance, concatenated means.
    pub fn product(&self, other: &GaussianMeasure) -> GaussianMeasure {
        let d1 = self.dim();
        let d2 = other.dim();
        let mut mean = Vec::with_capacity(d1 + d2);
        mean.extend_from_slice(&self.mean);
        mean.extend_from_slice(&other.mean);
        let mut cov = Mat::zeros(d1 + d2, d1 + d2);
        for i in 0..d1 {
            for j in 0..d1 {
                cov[(i, j)] = self.cov.entries()[(i, j)];
            }
        }
        for i in 0..d2 {
            for j in 0..d2 {
                cov[(d1 + i, d1 + j)] = other.cov.entries()[(i, j)];
            }
        }
        // block-diagonal of two SPD matrices is SPD
        GaussianMeasure::new(mean, SpdMatrix::new(cov).expect("block-diagonal SPD")).expect("dims")
    }

    /// Marginal over the coordinate range `[lo, hi)`.
    pub fn marginal(&self, lo: usize, hi: usize) -> Result<GaussianMeasure> {
        if hi > self.dim() || lo >= hi {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: hi,
                context: "GaussianMeasure::marginal",
            });
        }
        let d = hi - lo;
        let mean = self.mean[lo..hi].to_vec();
        let cov = Mat::from_fn(d, d, |i, j| self.cov.entries()[(lo + i, lo + j)]);
        GaussianMeasure::new(mean, SpdMatrix::new(cov)?)
    }
}

/// Linear-Gaussian conditioning with a deterministic shift in the data model
/// `y = G θ + shift + η`, `η ~ N(0, Σ_noise)`:
///
/// * mean  = m + (GΣ)ᵀ (GΣGᵀ + Σ_noise)⁻¹ (y − G m − shift)
/// * cov   = Σ − (GΣ)ᵀ (GΣGᵀ + Σ_noise)⁻¹ (GΣ)
///
/// The covariance does not depend on `y` or `shift`.
///
/// ```
/// use moderr_core::gaussian::{gaussian_condition, GaussianMeasure, SpdMatrix};
/// use moderr_core::linalg::Mat;
///
/// // scalar conjugate update: prior N(0,1), unit forward map and noise, y = 2
/// let prior = GaussianMeasure::new(vec![0.0], SpdMatrix::identity(1)).unwrap();
/// let post = gaussian_condition(
///     &prior,
///     &Mat::identity(1),
///     &SpdMatrix::identity(1),
///     &[0.0],
///     &[2.0],
/// )
/// .unwrap();
/// assert!((post.mean()[0] - 1.0).abs() < 1e-12);
/// assert!((post.cov().entries()[(0, 0)] - 0.5).abs() < 1e-12);
/// ```
pub fn gaussian_condition(
    prior: &GaussianMeasure,
    forward: &Mat,
    noise_cov: &SpdMatrix,
    shift: &[f64],
    data: &[f64],
) -> Result<GaussianMeasure> {
    let (cov, mut means) = gaussian_condition_shared(prior, forward, noise_cov, &[shift], data)?;
    Ok(GaussianMeasure {
        mean: means.pop().expect("one shift in, one mean out"),
        cov,
    })
}

/// Conditioning for several shift vectors at once. All posteriors share one
/// covariance computed by a single code path; the returned means are ordered
/// like `shifts`.
pub fn gaussian_condition_shared(
    prior: &GaussianMeasure,
    forward: &Mat,
    noise_cov: &SpdMatrix,
    shifts: &[&[f64]],
    data: &[f64],
) -> Result<(SpdMatrix, Vec<Vec<f64>>)> {
    let d = prior.dim();
    let n = noise_cov.dim();
    if forward.rows() != n || forward.cols() != d {
        return Err(Error::DimensionMismatch {
            expected: n * d,
            got: forward.rows() * forward.cols(),
            context: "gaussian_condition: forward map shape",
        });
    }
    if data.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: data.len(),
            context: "gaussian_condition: data length",
        });
    }
    for s in shifts {
        if s.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: s.len(),
                context: "gaussian_condition: shift length",
            });
        }
    }

    let g_sigma = forward.matmul(prior.cov().entries()); // n×d
    let mut s = g_sigma.matmul_t(forward); // G Σ Gᵀ
    s = s.add(noise_cov.entries());
    s.symmetrize();
    let s = SpdMatrix::new(s).map_err(|_| Error::SingularMatrix {
        context: "gaussian_condition: innovation covariance",
    })?;

    let w = s.solve_mat(&g_sigma); // (GΣGᵀ+Σn)⁻¹ GΣ, n×d
    let mut cov = prior.cov().entries().sub(&g_sigma.t_matmul(&w));
    cov.symmetrize();
    let cov = SpdMatrix::new(cov).map_err(|_| Error::NotPositiveDefinite {
        detail: "gaussian_condition: posterior covariance lost definiteness",
    })?;

    let g_m = forward.matvec(prior.mean());
    let means = shifts
        .iter()
        .map(|shift| {
            let innovation: Vec<f64> = (0..n).map(|i| data[i] - g_m[i] - shift[i]).collect();
            let alpha = s.solve(&innovation);
            let update = g_sigma.t_matvec(&alpha);
            linalg::add_vec(prior.mean(), &update)
        })
        .collect();
    Ok((cov, means))
}

/// Closed-form KL divergence between Gaussians,
/// `½ (tr(Σq⁻¹Σp) + |mq−mp|²_{Σq⁻¹} − d + ln det Σq − ln det Σp)`.
///
/// ```
/// use moderr_core::gaussian::{gaussian_kl, GaussianMeasure, SpdMatrix};
///
/// let p = GaussianMeasure::new(vec![0.0], SpdMatrix::identity(1)).unwrap();
/// let q = GaussianMeasure::new(vec![1.0], SpdMatrix::identity(1)).unwrap();
/// assert!((gaussian_kl(&p, &q).unwrap() - 0.5).abs() < 1e-12);
/// ```
pub fn gaussian_kl(p: &GaussianMeasure, q: &GaussianMeasure) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: q.dim(),
            got: p.dim(),
            context: "gaussian_kl",
        });
    }
    let d = p.dim() as f64;
    let trace = q.cov().inv_trace_product(p.cov().entries());
    let dm = linalg::sub_vec(q.mean(), p.mean());
    let maha = q.cov().inv_quad_form(&dm);
    let kl = 0.5 * (trace + maha - d + q.cov().log_det() - p.cov().log_det());
    Ok(kl.max(0.0))
}

/// Symmetric worst case `max{KL(p‖q), KL(q‖p)}`.
pub fn gaussian_kl_max(p: &GaussianMeasure, q: &GaussianMeasure) -> Result<f64> {
    Ok(gaussian_kl(p, q)?.max(gaussian_kl(q, p)?))
}

/// Moore–Penrose pseudoinverse with relative cutoff `tol` (see
/// [`DEFAULT_PINV_TOL`]).
pub fn pseudoinverse(mat: &Mat, tol: f64) -> Mat {
    linalg::pseudoinverse(mat, tol)
}
