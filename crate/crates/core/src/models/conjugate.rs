use crate::error::{check_dim, Error, Result};
use crate::gaussian::GaussianVariational;
use crate::linalg::{self, Cholesky};
use crate::models::{Dataset, GaussianPrior, Task};
use crate::scalar::{ln_2pi, Real};

fn posterior_parts<T: Real>(
    prior: &GaussianPrior<T>,
    data: &Dataset<T>,
    noise_var: T,
) -> Result<(Cholesky<T>, Vec<T>)> {
    if data.task() != Task::Regression || data.target_dim() != 1 {
        return Err(Error::Data("conjugate posterior needs a scalar regression dataset".into()));
    }
    if !(noise_var > T::zero()) {
        return Err(Error::invalid("noise variance must be positive"));
    }
    if !data.is_empty() {
        check_dim(prior.dim(), data.input_dim())?;
    }
    let x = data.inputs();
    let inv_noise = noise_var.recip();
    let mut prec = prior.precision_matrix();
    let mut rhs = prior.precision_times(prior.mean());
    if !data.is_empty() {
        prec = prec.add(&x.transpose().matmul(x).scale(inv_noise));
        let xty = x.tr_matvec(&data.targets().col(0));
        linalg::axpy(inv_noise, &xty, &mut rhs);
    }
    let chol = Cholesky::new(&prec.symmetrize())?;
    let mean = chol.solve(&rhs);
    Ok((chol, mean))
}

/// Exact posterior of Bayesian linear regression with known noise variance,
/// stored as a precision Cholesky factor.
pub fn conjugate_posterior<T: Real>(
    prior: &GaussianPrior<T>,
    data: &Dataset<T>,
    noise_var: T,
) -> Result<GaussianVariational<T>> {
    let (chol, mean) = posterior_parts(prior, data, noise_var)?;
    GaussianVariational::from_precision_cholesky(mean, chol)
}

/// Log marginal likelihood `log p(y | X)` of the same model.
pub fn log_evidence<T: Real>(prior: &GaussianPrior<T>, data: &Dataset<T>, noise_var: T) -> Result<T> {
    let (chol, mean) = posterior_parts(prior, data, noise_var)?;
    let n = T::from_usize_lossy(data.len());
    let y = data.targets().col(0);
    let p0_log_det = Cholesky::new(&prior.precision_matrix())?.log_det();
    let quad = linalg::dot(&y, &y) / noise_var + linalg::dot(prior.mean(), &prior.precision_times(prior.mean()))
        - linalg::dot(&mean, &chol.mul_lower(&chol.mul_upper(&mean)));
    Ok(-T::half() * n * (ln_2pi::<T>() + noise_var.ln()) + T::half() * (p0_log_det - chol.log_det()) - T::half() * quad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::models::synthetic_linear;
    use crate::rng::RngStream;

    #[test]
    fn empty_data_returns_prior() {
        let prior = GaussianPrior::<f64>::full(vec![1.0, 2.0], &Matrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]])).unwrap();
        let post = conjugate_posterior(&prior, &Dataset::empty(2, 1, Task::Regression), 1.0).unwrap();
        assert!(linalg::sub(post.mean(), prior.mean()).iter().all(|d| d.abs() < 1e-14));
        assert!(post.precision().sub(&prior.precision_matrix()).max_abs() < 1e-14);
    }

    #[test]
    fn scalar_hand_example() {
        let prior = GaussianPrior::<f64>::isotropic(1, 1.0).unwrap();
        let d = Dataset::new(Matrix::from_rows(&[vec![1.0]]), Matrix::from_rows(&[vec![2.0]]), Task::Regression).unwrap();
        let post = conjugate_posterior(&prior, &d, 1.0).unwrap();
        assert!((post.precision()[(0, 0)] - 2.0).abs() < 1e-14);
        assert!((post.mean()[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn evidence_matches_direct_marginal() {
        // y ~ N(X μ₀, σ² I + X P₀⁻¹ Xᵀ), evaluated with an N×N factorization.
        let mut rng = RngStream::new(12);
        let (data, _) = synthetic_linear::<f64>(15, 3, 0.4, &mut rng);
        let prior = GaussianPrior::with_mean(vec![0.1, -0.2, 0.3], 2.0).unwrap();
        let x = data.inputs();
        let cov = x.matmul(&x.transpose()).scale(0.5).add(&Matrix::scaled_identity(15, 0.4));
        let marg = GaussianVariational::from_covariance(x.matvec(prior.mean()), &cov).unwrap();
        let direct = marg.log_pdf(&data.targets().col(0)).unwrap();
        assert!((log_evidence(&prior, &data, 0.4).unwrap() - direct).abs() < 1e-9);
    }
}
