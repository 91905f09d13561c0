//! Differentiable likelihoods, Gaussian priors and the closed-form oracle.
//!
//! Gradient conventions used by every optimizer:
//!
//! * [`ProbModel::log_lik`] is the *sum* of per-row log-likelihoods.
//! * [`ProbModel::grad`] is the *mean* of per-row gradients `∇ log p(D_i|θ)`.
//! * [`ProbModel::ggn_diag`] is the mean of squared per-row gradients.
//! * [`ProbModel::hessian`] is the Hessian of `f(θ) = −(1/N) Σ log p(D_i|θ)`.

mod conjugate;
mod data;
mod linear;
mod logistic;
mod mlp;

pub use conjugate::{conjugate_posterior, log_evidence};
pub use data::{orthogonal_linear, synthetic_linear, synthetic_logistic, Dataset, Task};
pub use linear::LinearRegression;
pub use logistic::LogisticRegression;
pub use mlp::{Activation, DropoutMasks, Head, Mlp};

use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::gaussian::{CovRepr, GaussianVariational};
use crate::linalg::{self, Cholesky, Matrix};
use crate::scalar::{ln_2pi, Real};

/// Work (rows × parameters) above which per-row loops run on the thread pool.
const PARALLEL_WORK: usize = 1 << 16;

/// A likelihood `p(y | x, θ)` over a flat parameter vector.
pub trait ProbModel<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    fn param_dim(&self) -> usize;

    fn input_dim(&self) -> usize;

    fn task(&self) -> Task;

    /// Number of target columns per row.
    fn target_dim(&self) -> usize {
        1
    }

    /// `log p(y|x,θ)` for one row. When `grad` is given it is overwritten with
    /// `∇_θ log p(y|x,θ)`.
    fn row_log_lik(&self, theta: &[T], x: &[T], y: &[T], grad: Option<&mut [T]>) -> T;

    /// Network output: the regression mean, or class probabilities.
    fn predict(&self, theta: &[T], x: &[T]) -> Result<Vec<T>>;

    /// Exact Hessian of `−(1/N) Σ log p(D_i|θ)` when the model has one.
    fn hessian(&self, _theta: &[T], _data: &Dataset<T>) -> Option<Matrix<T>> {
        None
    }

    /// Validates `θ` and the dataset against the model.
    fn check(&self, theta: &[T], data: &Dataset<T>) -> Result<()> {
        check_dim(self.param_dim(), theta.len())?;
        if !data.is_empty() {
            check_dim(self.input_dim(), data.input_dim())?;
            check_dim(self.target_dim(), data.target_dim())?;
        }
        let ok = match (self.task(), data.task()) {
            (Task::Regression, Task::Regression) => true,
            (Task::BinaryClassification, Task::BinaryClassification) => true,
            (Task::Multiclass { classes: a }, Task::Multiclass { classes: b }) => a == b,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Data(format!("{} model cannot fit a {:?} dataset", self.name(), data.task())))
        }
    }

    /// Sum of per-row log-likelihoods; zero on an empty dataset.
    fn log_lik(&self, theta: &[T], data: &Dataset<T>) -> Result<T> {
        self.check(theta, data)?;
        let n = data.len();
        let row = |i: usize| self.row_log_lik(theta, data.x(i), data.y(i), None);
        let vals: Vec<T> = if n * self.param_dim() >= PARALLEL_WORK {
            (0..n).into_par_iter().map(row).collect()
        } else {
            (0..n).map(row).collect()
        };
        Ok(vals.into_iter().sum())
    }

    /// Per-row gradients `∇ log p(D_i|θ)`, one row each, together with the per-row log-likelihoods.
    fn per_sample(&self, theta: &[T], data: &Dataset<T>) -> Result<(Vec<T>, Matrix<T>)> {
        self.check(theta, data)?;
        let k = self.param_dim();
        let n = data.len();
        let mut grads = Matrix::zeros(n, k);
        let row = |(i, g): (usize, &mut [T])| self.row_log_lik(theta, data.x(i), data.y(i), Some(g));
        let lls: Vec<T> = if n * k >= PARALLEL_WORK {
            grads.as_mut_slice().par_chunks_mut(k.max(1)).enumerate().map(row).collect()
        } else {
            grads.as_mut_slice().chunks_mut(k.max(1)).enumerate().map(row).collect()
        };
        Ok((lls, grads))
    }

    fn per_sample_grads(&self, theta: &[T], data: &Dataset<T>) -> Result<Matrix<T>> {
        Ok(self.per_sample(theta, data)?.1)
    }

    /// Summed log-likelihood and mean gradient in one pass.
    fn log_lik_and_grad(&self, theta: &[T], data: &Dataset<T>) -> Result<(T, Vec<T>)> {
        let (lls, grads) = self.per_sample(theta, data)?;
        Ok((lls.into_iter().sum(), linalg::column_means(&grads)))
    }

    /// Mean of per-row gradients; zero on an empty dataset.
    fn grad(&self, theta: &[T], data: &Dataset<T>) -> Result<Vec<T>> {
        Ok(self.log_lik_and_grad(theta, data)?.1)
    }

    /// Generalized Gauss–Newton diagonal: mean of squared per-row gradients.
    fn ggn_diag(&self, theta: &[T], data: &Dataset<T>) -> Result<Vec<T>> {
        let grads = self.per_sample_grads(theta, data)?;
        Ok(linalg::column_means(&grads.map(|g| g * g)))
    }
}

/// Prior precision: either `τ I` or a full SPD matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum PriorPrecision<T> {
    Isotropic(T),
    Full(Cholesky<T>),
}

/// Gaussian prior `N(μ₀, P₀⁻¹)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrior<T> {
    mean0: Vec<T>,
    precision: PriorPrecision<T>,
}

impl<T: Real> GaussianPrior<T> {
    /// `N(0, I/τ)`.
    pub fn isotropic(k: usize, tau: T) -> Result<Self> {
        Self::with_mean(vec![T::zero(); k], tau)
    }

    pub fn with_mean(mean0: Vec<T>, tau: T) -> Result<Self> {
        if !(tau > T::zero()) || !tau.is_finite() {
            return Err(Error::invalid(format!("prior precision τ must be positive, got {tau}")));
        }
        Ok(Self { mean0, precision: PriorPrecision::Isotropic(tau) })
    }

    pub fn full(mean0: Vec<T>, precision: &Matrix<T>) -> Result<Self> {
        check_dim(mean0.len(), precision.rows())?;
        Ok(Self { mean0, precision: PriorPrecision::Full(Cholesky::new(precision)?) })
    }

    pub fn from_gaussian(q: &GaussianVariational<T>) -> Result<Self> {
        Self::full(q.mean().to_vec(), &q.precision())
    }

    pub fn dim(&self) -> usize {
        self.mean0.len()
    }

    pub fn mean(&self) -> &[T] {
        &self.mean0
    }

    /// The isotropic precision `τ`, if the prior is isotropic.
    pub fn tau(&self) -> Option<T> {
        match self.precision {
            PriorPrecision::Isotropic(t) => Some(t),
            PriorPrecision::Full(_) => None,
        }
    }

    pub fn precision_matrix(&self) -> Matrix<T> {
        match &self.precision {
            PriorPrecision::Isotropic(t) => Matrix::scaled_identity(self.dim(), *t),
            PriorPrecision::Full(c) => c.reconstruct(),
        }
    }

    pub fn precision_diag(&self) -> Vec<T> {
        match &self.precision {
            PriorPrecision::Isotropic(t) => vec![*t; self.dim()],
            PriorPrecision::Full(c) => c.reconstruct().diag(),
        }
    }

    /// `P₀ v`
    pub fn precision_times(&self, v: &[T]) -> Vec<T> {
        match &self.precision {
            PriorPrecision::Isotropic(t) => linalg::scale(v, *t),
            PriorPrecision::Full(c) => c.mul_lower(&c.mul_upper(v)),
        }
    }

    fn log_det_precision(&self) -> T {
        match &self.precision {
            PriorPrecision::Isotropic(t) => T::from_usize_lossy(self.dim()) * t.ln(),
            PriorPrecision::Full(c) => c.log_det(),
        }
    }

    pub fn log_density(&self, theta: &[T]) -> Result<T> {
        check_dim(self.dim(), theta.len())?;
        let d = linalg::sub(theta, &self.mean0);
        let quad = linalg::dot(&d, &self.precision_times(&d));
        let k = T::from_usize_lossy(self.dim());
        Ok(T::half() * (self.log_det_precision() - k * ln_2pi::<T>() - quad))
    }

    /// `∇ log p(θ) = −P₀(θ − μ₀)`
    pub fn grad_log_density(&self, theta: &[T]) -> Result<Vec<T>> {
        check_dim(self.dim(), theta.len())?;
        Ok(linalg::scale(&self.precision_times(&linalg::sub(theta, &self.mean0)), -T::one()))
    }

    /// The prior as a Gaussian in the requested representation.
    pub fn to_gaussian(&self, repr: CovRepr) -> Result<GaussianVariational<T>> {
        let q = match &self.precision {
            PriorPrecision::Isotropic(t) => {
                GaussianVariational::diagonal(self.mean0.clone(), vec![t.recip(); self.dim()])?
            }
            PriorPrecision::Full(c) => GaussianVariational::from_precision_cholesky(self.mean0.clone(), c.clone())?,
        };
        q.to_repr(repr)
    }
}

/// Unnormalized log-density over parameters.
pub trait LogDensity<T: Real> {
    fn dim(&self) -> usize;

    fn log_density(&self, theta: &[T]) -> Result<T>;
}

/// A log-density that also supplies its gradient.
pub trait GradLogDensity<T: Real>: LogDensity<T> {
    fn log_density_and_grad(&self, theta: &[T]) -> Result<(T, Vec<T>)>;
}

/// Wraps a closure as a [`LogDensity`].
pub struct FnDensity<F> {
    dim: usize,
    f: F,
}

impl<F> FnDensity<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<T: Real, F: Fn(&[T]) -> T> LogDensity<T> for FnDensity<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, theta: &[T]) -> Result<T> {
        check_dim(self.dim, theta.len())?;
        Ok((self.f)(theta))
    }
}

impl<T: Real> LogDensity<T> for GaussianPrior<T> {
    fn dim(&self) -> usize {
        GaussianPrior::dim(self)
    }

    fn log_density(&self, theta: &[T]) -> Result<T> {
        GaussianPrior::log_density(self, theta)
    }
}

impl<T: Real> GradLogDensity<T> for GaussianPrior<T> {
    fn log_density_and_grad(&self, theta: &[T]) -> Result<(T, Vec<T>)> {
        Ok((GaussianPrior::log_density(self, theta)?, self.grad_log_density(theta)?))
    }
}

/// Unnormalized posterior `log p(θ) + log p(D|θ)`.
pub struct Posterior<'a, T> {
    pub model: &'a dyn ProbModel<T>,
    pub prior: &'a GaussianPrior<T>,
    pub data: &'a Dataset<T>,
}

impl<'a, T: Real> Posterior<'a, T> {
    pub fn new(model: &'a dyn ProbModel<T>, prior: &'a GaussianPrior<T>, data: &'a Dataset<T>) -> Result<Self> {
        check_dim(model.param_dim(), prior.dim())?;
        Ok(Self { model, prior, data })
    }
}

impl<T: Real> LogDensity<T> for Posterior<'_, T> {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn log_density(&self, theta: &[T]) -> Result<T> {
        Ok(self.prior.log_density(theta)? + self.model.log_lik(theta, self.data)?)
    }
}

impl<T: Real> GradLogDensity<T> for Posterior<'_, T> {
    fn log_density_and_grad(&self, theta: &[T]) -> Result<(T, Vec<T>)> {
        let (ll, g) = self.model.log_lik_and_grad(theta, self.data)?;
        let mut grad = self.prior.grad_log_density(theta)?;
        linalg::axpy(T::from_usize_lossy(self.data.len()), &g, &mut grad);
        Ok((ll + self.prior.log_density(theta)?, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn isotropic_prior_density_matches_gaussian() {
        let prior = GaussianPrior::<f64>::isotropic(3, 2.0).unwrap();
        let q = prior.to_gaussian(CovRepr::FullCholeskyOfCov).unwrap();
        let th = [0.3, -0.2, 1.0];
        assert!((prior.log_density(&th).unwrap() - q.log_pdf(&th).unwrap()).abs() < 1e-12);
        assert_eq!(prior.grad_log_density(&th).unwrap(), vec![-0.6, 0.4, -2.0]);
        assert!(GaussianPrior::<f64>::isotropic(2, 0.0).is_err());
    }

    #[test]
    fn full_prior_density_matches_gaussian() {
        let p = Matrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]);
        let prior = GaussianPrior::<f64>::full(vec![1.0, -1.0], &p).unwrap();
        let q = GaussianVariational::from_precision(vec![1.0, -1.0], &p).unwrap();
        let th = [0.1, 0.4];
        assert!((prior.log_density(&th).unwrap() - q.log_pdf(&th).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn posterior_gradient_adds_scaled_likelihood_gradient() {
        let mut rng = RngStream::new(9);
        let (data, _) = synthetic_linear::<f64>(30, 3, 0.5, &mut rng);
        let model = LinearRegression::new(3, 0.5).unwrap();
        let prior = GaussianPrior::isotropic(3, 1.0).unwrap();
        let post = Posterior::new(&model, &prior, &data).unwrap();
        let th = [0.2, 0.1, -0.3];
        let (v, g) = post.log_density_and_grad(&th).unwrap();
        assert!((v - post.log_density(&th).unwrap()).abs() < 1e-10);
        let h = 1e-6;
        for i in 0..3 {
            let mut a = th;
            let mut b = th;
            a[i] += h;
            b[i] -= h;
            let fd = (post.log_density(&a).unwrap() - post.log_density(&b).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-5 * (1.0 + g[i].abs()));
        }
    }
}
