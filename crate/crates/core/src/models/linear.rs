use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::models::{Dataset, ProbModel, Task};
use crate::scalar::{ln_2pi, Real};

/// `y = xᵀθ + ε`, `ε ~ N(0, σ²)` with known noise variance.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearRegression<T> {
    dim: usize,
    noise_var: T,
}

impl<T: Real> LinearRegression<T> {
    pub fn new(dim: usize, noise_var: T) -> Result<Self> {
        if !(noise_var > T::zero()) || !noise_var.is_finite() {
            return Err(Error::invalid(format!("noise variance must be positive, got {noise_var}")));
        }
        Ok(Self { dim, noise_var })
    }

    pub fn noise_var(&self) -> T {
        self.noise_var
    }
}

impl<T: Real> ProbModel<T> for LinearRegression<T> {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn param_dim(&self) -> usize {
        self.dim
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn task(&self) -> Task {
        Task::Regression
    }

    fn row_log_lik(&self, theta: &[T], x: &[T], y: &[T], grad: Option<&mut [T]>) -> T {
        let r = y[0] - linalg::dot(x, theta);
        if let Some(g) = grad {
            let c = r / self.noise_var;
            g.iter_mut().zip(x).for_each(|(g, &xi)| *g = c * xi);
        }
        -T::half() * (ln_2pi::<T>() + self.noise_var.ln() + r * r / self.noise_var)
    }

    fn predict(&self, theta: &[T], x: &[T]) -> Result<Vec<T>> {
        crate::error::check_dim(self.dim, x.len())?;
        Ok(vec![linalg::dot(x, theta)])
    }

    /// `XᵀX / (N σ²)`, independent of `θ`.
    fn hessian(&self, _theta: &[T], data: &Dataset<T>) -> Option<Matrix<T>> {
        let x = data.inputs();
        let n = T::from_usize_lossy(data.len().max(1));
        Some(x.transpose().matmul(x).scale((n * self.noise_var).recip()))
    }
}
