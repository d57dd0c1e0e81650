//! Misfit families and their reweighted posteriors.
//!
//! Four negative log-likelihoods appear throughout the crate, all of the form
//! `Φ(θ) = ½|residual|²_W`:
//!
//! * best — residual `y − OG†(θ)`, weight `Σ_noise⁻¹`;
//! * approximate — residual `y − OG(θ)`, weight `Σ_noise⁻¹`;
//! * enhanced — residual `y − OG(θ) − O m_ε`, weight `(Σ_noise + OΣ_εO*)⁻¹`;
//! * joint — residual `y − OG(θ) − Oδ`, weight `Σ_noise⁻¹`, where `δ` is an
//!   inferred model-error argument.
//!
//! A θ-only misfit can be *lifted* to the product space of `(θ, δ)` by
//! ignoring the error argument; the lifted posterior then factorises as the
//! original posterior times the error prior, which is what makes joint and
//! marginal comparisons meaningful.
//!
//! [`FiniteGridModel`] discretises a prior on finitely many nodes so that
//! posteriors, KL divergences, and L¹ norms can be computed exactly by
//! enumeration; the bound machinery is verified against it.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Error;
use crate::fmath;
use crate::gaussian::{
    gaussian_condition, weighted_norm_sq, GaussianMeasure, SpdMatrix, WeightedNorm,
};
use crate::linalg::Mat;
use crate::Result;

/// Which posterior construction a misfit belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MisfitFamily {
    Best,
    Approximate,
    Enhanced,
    Joint,
}

/// Parameter-to-observation map `θ ↦ OG(θ) ∈ ℝⁿ`.
pub type ObsMap = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Gaussian model `ε ~ N(m_ε, Σ_ε)` for the unknown state error, given
/// directly in observation coordinates: the shift `O m_ε` and the PSD
/// covariance term `O Σ_ε O*`.
#[derive(Debug, Clone)]
pub struct EnhancedNoiseSpec {
    obs_mean: Vec<f64>,
    cov_term: Mat,
    enhanced_cov: SpdMatrix,
}

impl EnhancedNoiseSpec {
    /// `obs_mean = O m_ε`, `cov_term = O Σ_ε O*`. Requires `cov_term` PSD and
    /// `Σ_noise + cov_term` positive definite.
    pub fn new(obs_mean: Vec<f64>, cov_term: Mat, noise: &SpdMatrix) -> Result<Self> {
        let n = noise.dim();
        if obs_mean.len() != n || cov_term.rows() != n || cov_term.cols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: obs_mean.len().max(cov_term.rows()),
                context: "EnhancedNoiseSpec::new",
            });
        }
        let mut sym = cov_term.clone();
        sym.symmetrize();
        let enhanced_cov = SpdMatrix::from_symmetric_clipped(noise.entries().add(&sym))?;
        Ok(EnhancedNoiseSpec {
            obs_mean,
            cov_term: sym,
            enhanced_cov,
        })
    }

    pub fn obs_mean(&self) -> &[f64] {
        &self.obs_mean
    }

    pub fn cov_term(&self) -> &Mat {
        &self.cov_term
    }

    /// `Σ_noise + O Σ_ε O*`.
    pub fn enhanced_cov(&self) -> &SpdMatrix {
        &self.enhanced_cov
    }
}

/// One misfit: family tag, data, observation maps, shift, and weight.
pub struct MisfitSpec {
    family: MisfitFamily,
    lifted: bool,
    data: Vec<f64>,
    obs_model: ObsMap,
    obs_error: Option<ObsMap>,
    shift: Vec<f64>,
    weight: WeightedNorm,
}

impl MisfitSpec {
    /// Best misfit `½|y − OG†(θ)|²_{Σ_noise⁻¹}`; `obs_model` is the best
    /// parameter-to-observation map (model error included).
    pub fn best(data: Vec<f64>, obs_model: ObsMap, noise: &SpdMatrix) -> Result<Self> {
        Self::build(MisfitFamily::Best, data, obs_model, None, None, noise)
    }

    /// Approximate misfit `½|y − OG(θ)|²_{Σ_noise⁻¹}`.
    pub fn approximate(data: Vec<f64>, obs_model: ObsMap, noise: &SpdMatrix) -> Result<Self> {
        Self::build(
            MisfitFamily::Approximate,
            data,
            obs_model,
            None,
            None,
            noise,
        )
    }

    /// Enhanced misfit `½|y − OG(θ) − Om_ε|²_{(Σ_noise+OΣ_εO*)⁻¹}`.
    pub fn enhanced(
        data: Vec<f64>,
        obs_model: ObsMap,
        enhanced: &EnhancedNoiseSpec,
        noise: &SpdMatrix,
    ) -> Result<Self> {
        Self::build(
            MisfitFamily::Enhanced,
            data,
            obs_model,
            None,
            Some(enhanced),
            noise,
        )
    }

    /// Joint misfit `½|y − OG(θ) − Oδ|²_{Σ_noise⁻¹}`; `obs_error` maps the
    /// error argument (e.g. expansion coefficients) to its observed image.
    pub fn joint(
        data: Vec<f64>,
        obs_model: ObsMap,
        obs_error: ObsMap,
        noise: &SpdMatrix,
    ) -> Result<Self> {
        Self::build(
            MisfitFamily::Joint,
            data,
            obs_model,
            Some(obs_error),
            None,
            noise,
        )
    }

    fn build(
        family: MisfitFamily,
        data: Vec<f64>,
        obs_model: ObsMap,
        obs_error: Option<ObsMap>,
        enhanced: Option<&EnhancedNoiseSpec>,
        noise: &SpdMatrix,
    ) -> Result<Self> {
        let n = noise.dim();
        if data.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: data.len(),
                context: "MisfitSpec data length",
            });
        }
        let (shift, weight) = match (family, enhanced) {
            (MisfitFamily::Enhanced, Some(e)) => (
                e.obs_mean().to_vec(),
                WeightedNorm::new(SpdMatrix::new(e.enhanced_cov().inverse())?),
            ),
            (MisfitFamily::Enhanced, None) => {
                return Err(Error::FamilyMismatch {
                    detail: "enhanced family requires an EnhancedNoiseSpec",
                })
            }
            _ => (
                vec![0.0; n],
                WeightedNorm::new(SpdMatrix::new(noise.inverse())?),
            ),
        };
        Ok(MisfitSpec {
            family,
            lifted: false,
            data,
            obs_model,
            obs_error,
            shift,
            weight,
        })
    }

    pub fn family(&self) -> MisfitFamily {
        self.family
    }

    pub fn is_lifted(&self) -> bool {
        self.lifted
    }

    pub fn obs_dim(&self) -> usize {
        self.data.len()
    }

    /// Lifts a θ-only misfit to the product space: the evaluator then accepts
    /// and ignores an error argument. The lifted posterior is the product of
    /// the original posterior with the error prior, and all `L^q` norms are
    /// unchanged because the evaluations are literally the same.
    pub fn lift(mut self) -> Result<Self> {
        if self.family == MisfitFamily::Joint {
            return Err(Error::FamilyMismatch {
                detail: "the joint misfit genuinely depends on the error argument",
            });
        }
        self.lifted = true;
        Ok(self)
    }

    /// Evaluates the misfit. `error` must be supplied iff the family is
    /// joint; lifted misfits accept and ignore it.
    pub fn eval(&self, theta: &[f64], error: Option<&[f64]>) -> Result<f64> {
        match (self.family, error, self.lifted) {
            (MisfitFamily::Joint, None, _) => {
                return Err(Error::FamilyMismatch {
                    detail: "joint misfit needs an error argument",
                })
            }
            (MisfitFamily::Joint, Some(_), _) => {}
            (_, Some(_), false) => {
                return Err(Error::FamilyMismatch {
                    detail: "only lifted or joint misfits take an error argument",
                })
            }
            _ => {}
        }
        let og = (self.obs_model)(theta);
        if og.len() != self.data.len() {
            return Err(Error::DimensionMismatch {
                expected: self.data.len(),
                got: og.len(),
                context: "misfit obs_model output",
            });
        }
        let mut residual: Vec<f64> = (0..self.data.len())
            .map(|i| self.data[i] - og[i] - self.shift[i])
            .collect();
        if self.family == MisfitFamily::Joint {
            let oe = (self.obs_error.as_ref().expect("joint has obs_error"))(
                error.expect("checked above"),
            );
            if oe.len() != residual.len() {
                return Err(Error::DimensionMismatch {
                    expected: residual.len(),
                    got: oe.len(),
                    context: "misfit obs_error output",
                });
            }
            for (r, e) in residual.iter_mut().zip(oe.iter()) {
                *r -= e;
            }
        }
        Ok(0.5 * weighted_norm_sq(&residual, &self.weight)?)
    }
}

/// Convenience evaluator matching the operation-style call signature.
pub fn misfit_eval(spec: &MisfitSpec, theta: &[f64], error: Option<&[f64]>) -> Result<f64> {
    spec.eval(theta, error)
}

// ---------------------------------------------------------------------------
// finite-grid posteriors
// ---------------------------------------------------------------------------

/// Prior supported on finitely many parameter nodes together with misfit
/// values tabulated per node, for exact (enumeration) posterior and KL
/// computations.
#[derive(Debug, Clone)]
pub struct FiniteGridModel {
    nodes: Vec<Vec<f64>>,
    prior_weights: Vec<f64>,
    misfit_values: Vec<Vec<f64>>,
}

impl FiniteGridModel {
    pub fn new(
        nodes: Vec<Vec<f64>>,
        prior_weights: Vec<f64>,
        misfit_values: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if nodes.is_empty() || prior_weights.len() != nodes.len() {
            return Err(Error::InvalidWeights {
                detail: "need at least one node and one weight per node",
            });
        }
        if prior_weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::InvalidWeights {
                detail: "weights must be finite and nonnegative",
            });
        }
        let total: f64 = prior_weights.iter().sum();
        if fmath::abs(total - 1.0) > 1e-12 {
            return Err(Error::InvalidWeights {
                detail: "weights must sum to one",
            });
        }
        for values in &misfit_values {
            if values.len() != nodes.len() {
                return Err(Error::DimensionMismatch {
                    expected: nodes.len(),
                    got: values.len(),
                    context: "FiniteGridModel misfit values",
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidWeights {
                    detail: "misfit values must be finite",
                });
            }
        }
        Ok(FiniteGridModel {
            nodes,
            prior_weights,
            misfit_values,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }

    pub fn prior_weights(&self) -> &[f64] {
        &self.prior_weights
    }

    pub fn misfit_values(&self, misfit_id: usize) -> &[f64] {
        &self.misfit_values[misfit_id]
    }

    /// Exact prior-weighted L¹ norm `Σ_k w_k |Φ_k|`.
    pub fn l1_norm(&self, misfit_id: usize) -> f64 {
        self.prior_weights
            .iter()
            .zip(&self.misfit_values[misfit_id])
            .map(|(&w, &v)| w * fmath::abs(v))
            .sum()
    }

    /// Exact prior-weighted L¹ norm of the difference of two misfits.
    pub fn l1_diff(&self, id_a: usize, id_b: usize) -> f64 {
        self.prior_weights
            .iter()
            .zip(
                self.misfit_values[id_a]
                    .iter()
                    .zip(&self.misfit_values[id_b]),
            )
            .map(|(&w, (&a, &b))| w * fmath::abs(a - b))
            .sum()
    }
}

/// Exact reweighted posterior `w_k ∝ prior_k · exp(−Φ_k)`, normalised with
/// max-subtraction so large misfits cannot underflow the whole vector.
pub fn grid_posterior(grid: &FiniteGridModel, misfit_id: usize) -> Result<Vec<f64>> {
    let phi = grid.misfit_values(misfit_id);
    let max_log = grid
        .prior_weights()
        .iter()
        .zip(phi)
        .filter(|(&w, _)| w > 0.0)
        .map(|(&w, &p)| fmath::ln(w) - p)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_log == f64::NEG_INFINITY {
        return Err(Error::InvalidWeights {
            detail: "posterior normalisation vanished",
        });
    }
    let unnorm: Vec<f64> = grid
        .prior_weights()
        .iter()
        .zip(phi)
        .map(|(&w, &p)| {
            if w > 0.0 {
                fmath::exp(fmath::ln(w) - p - max_log)
            } else {
                0.0
            }
        })
        .collect();
    let z: f64 = unnorm.iter().sum();
    if !z.is_finite() || z <= 0.0 {
        return Err(Error::InvalidWeights {
            detail: "posterior normalisation vanished",
        });
    }
    Ok(unnorm.into_iter().map(|v| v / z).collect())
}

/// Exact discrete KL `Σ_k p_k ln(p_k/q_k)` with `0·ln 0 = 0`; a support
/// violation returns `+∞` rather than an error, since near-singular
/// comparisons are legitimate inputs here.
pub fn grid_kl(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "grid_kl needs equal lengths");
    let mut sum = 0.0;
    for (&pk, &qk) in p.iter().zip(q.iter()) {
        if pk == 0.0 {
            continue;
        }
        if qk == 0.0 {
            return f64::INFINITY;
        }
        sum += pk * fmath::ln(pk / qk);
    }
    sum.max(0.0)
}

// ---------------------------------------------------------------------------
// joint linear-Gaussian posterior
// ---------------------------------------------------------------------------

/// Point in the product space of parameter and error-expansion coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct JointParameter {
    pub theta: Vec<f64>,
    pub error_coeffs: Vec<f64>,
}

impl JointParameter {
    pub fn new(theta: Vec<f64>, error_coeffs: Vec<f64>) -> Result<Self> {
        if theta
            .iter()
            .chain(error_coeffs.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFiniteSample { index: 0 });
        }
        Ok(JointParameter {
            theta,
            error_coeffs,
        })
    }
}

/// Gaussian posterior on the stacked `(θ, c)` space.
#[derive(Debug, Clone)]
pub struct JointPosterior {
    measure: GaussianMeasure,
    theta_dim: usize,
    coeff_dim: usize,
}

impl JointPosterior {
    pub fn measure(&self) -> &GaussianMeasure {
        &self.measure
    }

    pub fn theta_dim(&self) -> usize {
        self.theta_dim
    }

    pub fn coeff_dim(&self) -> usize {
        self.coeff_dim
    }

    /// The marginal posterior: the θ-marginal of the joint posterior.
    pub fn theta_marginal(&self) -> GaussianMeasure {
        self.measure
            .marginal(0, self.theta_dim)
            .expect("theta block exists")
    }

    pub fn coeff_marginal(&self) -> Result<GaussianMeasure> {
        if self.coeff_dim == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
                context: "coeff_marginal of a degenerate joint posterior",
            });
        }
        self.measure
            .marginal(self.theta_dim, self.theta_dim + self.coeff_dim)
    }

    /// Conditional law of the coefficients given θ: mean `offset + R θ`,
    /// fixed covariance. Needed for the chain-rule decomposition of the
    /// marginal-posterior KL.
    pub fn coeff_conditional(&self) -> Result<CoeffConditional> {
        if self.coeff_dim == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
                context: "coeff_conditional of a degenerate joint posterior",
            });
        }
        let p = self.theta_dim;
        let j = self.coeff_dim;
        let cov = self.measure.cov().entries();
        let theta_block = Mat::from_fn(p, p, |a, b| cov[(a, b)]);
        let cross = Mat::from_fn(j, p, |a, b| cov[(p + a, b)]); // Σ_cθ
        let coeff_block = Mat::from_fn(j, j, |a, b| cov[(p + a, p + b)]);
        let theta_spd = SpdMatrix::new(theta_block)?;
        // R = Σ_cθ Σ_θθ⁻¹
        let r = theta_spd.solve_mat(&cross.transpose()).transpose();
        let mut cond_cov = coeff_block.sub(&r.matmul_t(&cross));
        cond_cov.symmetrize();
        let mean_theta = &self.measure.mean()[..p];
        let mean_coeff = &self.measure.mean()[p..];
        let r_mtheta = r.matvec(mean_theta);
        let offset: Vec<f64> = mean_coeff
            .iter()
            .zip(r_mtheta.iter())
            .map(|(&m, &rm)| m - rm)
            .collect();
        Ok(CoeffConditional {
            gain: r,
            offset,
            cov: SpdMatrix::from_symmetric_clipped(cond_cov)?,
        })
    }
}

/// Affine conditional `c | θ ~ N(offset + gain·θ, cov)`.
#[derive(Debug, Clone)]
pub struct CoeffConditional {
    pub gain: Mat,
    pub offset: Vec<f64>,
    pub cov: SpdMatrix,
}

/// Conditions the independent product prior `μ_θ ⊗ μ_c` on data observed
/// through the stacked forward map `[OM | OΨ]` with noise `Σ_noise`. The
/// θ-marginal of the result is the marginal posterior.
pub fn joint_gaussian_posterior(
    prior_theta: &GaussianMeasure,
    prior_coeffs: &GaussianMeasure,
    obs_theta: &Mat,
    obs_error: &Mat,
    noise: &SpdMatrix,
    data: &[f64],
) -> Result<JointPosterior> {
    let n = noise.dim();
    let p = prior_theta.dim();
    let j = prior_coeffs.dim();
    if obs_theta.rows() != n || obs_theta.cols() != p {
        return Err(Error::DimensionMismatch {
            expected: n * p,
            got: obs_theta.rows() * obs_theta.cols(),
            context: "joint_gaussian_posterior: obs_theta shape",
        });
    }
    if obs_error.rows() != n || obs_error.cols() != j {
        return Err(Error::DimensionMismatch {
            expected: n * j,
            got: obs_error.rows() * obs_error.cols(),
            context: "joint_gaussian_posterior: obs_error shape",
        });
    }
    let prior = prior_theta.product(prior_coeffs);
    let stacked = Mat::from_fn(n, p + j, |i, k| {
        if k < p {
            obs_theta[(i, k)]
        } else {
            obs_error[(i, k - p)]
        }
    });
    let shift = vec![0.0; n];
    let measure = gaussian_condition(&prior, &stacked, noise, &shift, data)?;
    Ok(JointPosterior {
        measure,
        theta_dim: p,
        coeff_dim: j,
    })
}
