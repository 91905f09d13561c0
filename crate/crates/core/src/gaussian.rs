//! Gaussian variational family in common, natural and expectation
//! parametrizations.
//!
//! A [`GaussianVariational`] stores its mean together with exactly one factor:
//! a Cholesky factor of the covariance, a Cholesky factor of the precision, or
//! a vector of variances. Which one is held is decided by the optimizer that
//! owns the value; switching representation is always an explicit call.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, Cholesky, Matrix};
use crate::rng::RngStream;
use crate::scalar::{ln_2pi, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovRepr {
    FullCholeskyOfCov,
    FullCholeskyOfPrecision,
    DiagonalVariance,
}

#[derive(Clone, Debug, PartialEq)]
enum Factor<T> {
    Cov(Cholesky<T>),
    Prec(Cholesky<T>),
    DiagVar(Vec<T>),
}

/// Multivariate normal `N(mean, Σ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianVariational<T> {
    mean: Vec<T>,
    factor: Factor<T>,
}

impl<T: Real> GaussianVariational<T> {
    pub fn from_covariance(mean: Vec<T>, cov: &Matrix<T>) -> Result<Self> {
        check_dim(mean.len(), cov.rows())?;
        check_finite(&mean)?;
        Ok(Self { mean, factor: Factor::Cov(Cholesky::new(cov)?) })
    }

    pub fn from_precision(mean: Vec<T>, precision: &Matrix<T>) -> Result<Self> {
        check_dim(mean.len(), precision.rows())?;
        check_finite(&mean)?;
        Ok(Self { mean, factor: Factor::Prec(Cholesky::new(precision)?) })
    }

    pub fn from_cov_cholesky(mean: Vec<T>, chol: Cholesky<T>) -> Result<Self> {
        check_dim(mean.len(), chol.dim())?;
        check_finite(&mean)?;
        Ok(Self { mean, factor: Factor::Cov(chol) })
    }

    pub fn from_precision_cholesky(mean: Vec<T>, chol: Cholesky<T>) -> Result<Self> {
        check_dim(mean.len(), chol.dim())?;
        check_finite(&mean)?;
        Ok(Self { mean, factor: Factor::Prec(chol) })
    }

    pub fn diagonal(mean: Vec<T>, variances: Vec<T>) -> Result<Self> {
        check_dim(mean.len(), variances.len())?;
        check_finite(&mean)?;
        if let Some(v) = variances.iter().find(|v| !(**v > T::zero()) || !v.is_finite()) {
            return Err(Error::NotPositiveDefinite(format!("variance {v}")));
        }
        Ok(Self { mean, factor: Factor::DiagVar(variances) })
    }

    /// `N(0, I_k)` in the requested representation.
    pub fn standard(k: usize, repr: CovRepr) -> Self {
        let mean = vec![T::zero(); k];
        let factor = match repr {
            CovRepr::FullCholeskyOfCov => Factor::Cov(Cholesky::from_factor(Matrix::identity(k)).unwrap()),
            CovRepr::FullCholeskyOfPrecision => Factor::Prec(Cholesky::from_factor(Matrix::identity(k)).unwrap()),
            CovRepr::DiagonalVariance => Factor::DiagVar(vec![T::one(); k]),
        };
        Self { mean, factor }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn repr(&self) -> CovRepr {
        match self.factor {
            Factor::Cov(_) => CovRepr::FullCholeskyOfCov,
            Factor::Prec(_) => CovRepr::FullCholeskyOfPrecision,
            Factor::DiagVar(_) => CovRepr::DiagonalVariance,
        }
    }

    /// Same covariance, new mean.
    pub fn with_mean(&self, mean: Vec<T>) -> Result<Self> {
        check_dim(self.dim(), mean.len())?;
        check_finite(&mean)?;
        Ok(Self { mean, factor: self.factor.clone() })
    }

    pub fn covariance(&self) -> Matrix<T> {
        match &self.factor {
            Factor::Cov(c) => c.reconstruct(),
            Factor::Prec(c) => c.inverse(),
            Factor::DiagVar(v) => Matrix::from_diag(v),
        }
    }

    pub fn precision(&self) -> Matrix<T> {
        match &self.factor {
            Factor::Cov(c) => c.inverse(),
            Factor::Prec(c) => c.reconstruct(),
            Factor::DiagVar(v) => Matrix::from_diag(&v.iter().map(|x| x.recip()).collect::<Vec<_>>()),
        }
    }

    /// Marginal variances `diag(Σ)`.
    pub fn variances(&self) -> Vec<T> {
        match &self.factor {
            Factor::DiagVar(v) => v.clone(),
            _ => self.covariance().diag(),
        }
    }

    /// `log det Σ`
    pub fn log_det_cov(&self) -> T {
        match &self.factor {
            Factor::Cov(c) => c.log_det(),
            Factor::Prec(c) => -c.log_det(),
            Factor::DiagVar(v) => v.iter().map(|x| x.ln()).sum(),
        }
    }

    /// `Σ⁻¹ d`
    pub fn precision_times(&self, d: &[T]) -> Vec<T> {
        match &self.factor {
            Factor::Cov(c) => c.solve(d),
            Factor::Prec(c) => c.mul_lower(&c.mul_upper(d)),
            Factor::DiagVar(v) => d.iter().zip(v).map(|(&x, &s)| x / s).collect(),
        }
    }

    /// `Σ d`
    pub fn covariance_times(&self, d: &[T]) -> Vec<T> {
        match &self.factor {
            Factor::Cov(c) => c.mul_lower(&c.mul_upper(d)),
            Factor::Prec(c) => c.solve(d),
            Factor::DiagVar(v) => d.iter().zip(v).map(|(&x, &s)| x * s).collect(),
        }
    }

    /// Squared Mahalanobis distance computed through the stored factor.
    fn mahalanobis_sq(&self, d: &[T]) -> T {
        match &self.factor {
            Factor::Cov(c) => {
                let z = c.solve_lower(d);
                linalg::dot(&z, &z)
            }
            Factor::Prec(c) => {
                let z = c.mul_upper(d);
                linalg::dot(&z, &z)
            }
            Factor::DiagVar(v) => d.iter().zip(v).map(|(&x, &s)| x * x / s).sum(),
        }
    }

    /// Re-expresses the same distribution in another representation.
    ///
    /// Converting a full covariance to `DiagonalVariance` is rejected unless it
    /// is already diagonal.
    pub fn to_repr(&self, repr: CovRepr) -> Result<Self> {
        if repr == self.repr() {
            return Ok(self.clone());
        }
        match repr {
            CovRepr::FullCholeskyOfCov => Self::from_covariance(self.mean.clone(), &self.covariance()),
            CovRepr::FullCholeskyOfPrecision => Self::from_precision(self.mean.clone(), &self.precision()),
            CovRepr::DiagonalVariance => {
                let cov = self.covariance();
                let k = self.dim();
                let scale = cov.max_abs();
                for i in 0..k {
                    for j in 0..k {
                        if i != j && cov[(i, j)].abs() > T::lit(1e-12) * scale {
                            return Err(Error::invalid("covariance is not diagonal"));
                        }
                    }
                }
                Self::diagonal(self.mean.clone(), cov.diag())
            }
        }
    }

    /// Exact log-density.
    pub fn log_pdf(&self, theta: &[T]) -> Result<T> {
        check_dim(self.dim(), theta.len())?;
        let d = linalg::sub(theta, &self.mean);
        let k = T::from_usize_lossy(self.dim());
        Ok(-T::half() * (k * ln_2pi::<T>() + self.log_det_cov() + self.mahalanobis_sq(&d)))
    }

    /// Differential entropy `½ log det(2πe Σ)`.
    pub fn entropy(&self) -> T {
        let k = T::from_usize_lossy(self.dim());
        T::half() * (k * (ln_2pi::<T>() + T::one()) + self.log_det_cov())
    }

    /// `μ + C ε` for a given standard-normal vector `ε`, where `C Cᵀ = Σ`.
    pub fn transform_noise(&self, eps: &[T]) -> Vec<T> {
        let scaled = match &self.factor {
            Factor::Cov(c) => c.mul_lower(eps),
            Factor::Prec(c) => c.solve_upper(eps),
            Factor::DiagVar(v) => eps.iter().zip(v).map(|(&e, &s)| e * s.sqrt()).collect(),
        };
        linalg::add(&self.mean, &scaled)
    }

    pub fn sample_one(&self, rng: &mut RngStream) -> Vec<T> {
        let eps = rng.normal_vec(self.dim());
        self.transform_noise(&eps)
    }

    /// `n_s` reparametrized draws, one per row.
    pub fn sample_reparam(&self, rng: &mut RngStream, n_s: usize) -> Result<Matrix<T>> {
        if n_s == 0 {
            return Err(Error::invalid("n_s must be at least 1"));
        }
        let k = self.dim();
        let mut out = Matrix::zeros(n_s, k);
        for s in 0..n_s {
            let draw = self.sample_one(rng);
            out.row_mut(s).copy_from_slice(&draw);
        }
        Ok(out)
    }

    /// Score of `log q` with respect to the mean and the covariance matrix:
    /// `Σ⁻¹(θ−μ)` and `−½(Σ⁻¹ − Σ⁻¹(θ−μ)(θ−μ)ᵀΣ⁻¹)`.
    pub fn score_gradients(&self, theta: &[T]) -> Result<(Vec<T>, Matrix<T>)> {
        check_dim(self.dim(), theta.len())?;
        let d = linalg::sub(theta, &self.mean);
        let v = self.precision_times(&d);
        let mut g_sigma = self.precision().sub(&Matrix::outer(&v, &v));
        g_sigma = g_sigma.scale(-T::half()).symmetrize();
        Ok((v, g_sigma))
    }

    pub fn to_natural(&self) -> NaturalParams<T> {
        let prec = self.precision();
        NaturalParams { lambda1: prec.matvec(&self.mean), lambda2: prec.scale(-T::half()) }
    }

    pub fn to_expectation(&self) -> ExpectationParams<T> {
        let m2 = self.covariance().add(&Matrix::outer(&self.mean, &self.mean));
        ExpectationParams { m1: self.mean.clone(), m2: m2.symmetrize() }
    }
}

fn check_finite<T: Real>(v: &[T]) -> Result<()> {
    if linalg::all_finite(v) {
        Ok(())
    } else {
        Err(Error::NonFinite("mean vector".into()))
    }
}

/// `(λ₁, λ₂) = (Σ⁻¹μ, −½Σ⁻¹)`
#[derive(Clone, Debug, PartialEq)]
pub struct NaturalParams<T> {
    pub lambda1: Vec<T>,
    pub lambda2: Matrix<T>,
}

impl<T: Real> NaturalParams<T> {
    /// Back to `(μ, Σ)`, stored as a precision Cholesky factor.
    pub fn to_common(&self) -> Result<GaussianVariational<T>> {
        check_dim(self.lambda1.len(), self.lambda2.rows())?;
        let prec = self.lambda2.scale(-T::two()).symmetrize();
        let chol = Cholesky::new(&prec)?;
        let mean = chol.solve(&self.lambda1);
        GaussianVariational::from_precision_cholesky(mean, chol)
    }

    /// `A(λ) = −¼ λ₁ᵀ λ₂⁻¹ λ₁ − ½ log det(−2λ₂)`, without the `k/2 log 2π` constant.
    pub fn log_partition(&self) -> Result<T> {
        let prec = self.lambda2.scale(-T::two()).symmetrize();
        let chol = Cholesky::new(&prec)?;
        // λ₂⁻¹ = −2 Σ⁻¹⁻¹ ⇒ −¼ λ₁ᵀ λ₂⁻¹ λ₁ = ½ λ₁ᵀ P⁻¹ λ₁
        let quad = linalg::dot(&self.lambda1, &chol.solve(&self.lambda1));
        Ok(T::half() * quad - T::half() * chol.log_det())
    }
}

/// `(m₁, m₂) = (μ, Σ + μμᵀ)`
#[derive(Clone, Debug, PartialEq)]
pub struct ExpectationParams<T> {
    pub m1: Vec<T>,
    pub m2: Matrix<T>,
}

impl<T: Real> ExpectationParams<T> {
    /// Back to `(μ, Σ)`, stored as a covariance Cholesky factor.
    pub fn to_common(&self) -> Result<GaussianVariational<T>> {
        check_dim(self.m1.len(), self.m2.rows())?;
        let cov = self.m2.sub(&Matrix::outer(&self.m1, &self.m1)).symmetrize();
        GaussianVariational::from_covariance(self.m1.clone(), &cov)
    }
}

/// Closed-form `KL(q1 ‖ q2)`.
pub fn kl_gaussians<T: Real>(q1: &GaussianVariational<T>, q2: &GaussianVariational<T>) -> Result<T> {
    check_dim(q1.dim(), q2.dim())?;
    let k = T::from_usize_lossy(q1.dim());
    let p2 = q2.precision();
    let trace_term = p2.matmul(&q1.covariance()).trace();
    let d = linalg::sub(q2.mean(), q1.mean());
    let quad = linalg::dot(&d, &q2.precision_times(&d));
    let kl = T::half() * (trace_term + quad - k + q2.log_det_cov() - q1.log_det_cov());
    // rounding can push an exact zero slightly negative
    Ok(kl.max(T::zero()))
}
