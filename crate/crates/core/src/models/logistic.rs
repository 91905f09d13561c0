use crate::error::{check_dim, Result};
use crate::linalg;
use crate::models::{ProbModel, Task};
use crate::scalar::{sigmoid, softplus, Real};

/// Bernoulli likelihood with `p̂ = sigmoid(xᵀθ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticRegression {
    dim: usize,
}

impl LogisticRegression {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl<T: Real> ProbModel<T> for LogisticRegression {
    fn name(&self) -> &'static str {
        "logistic"
    }

    fn param_dim(&self) -> usize {
        self.dim
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn task(&self) -> Task {
        Task::BinaryClassification
    }

    fn row_log_lik(&self, theta: &[T], x: &[T], y: &[T], grad: Option<&mut [T]>) -> T {
        let z = linalg::dot(x, theta);
        if let Some(g) = grad {
            let c = y[0] - sigmoid(z);
            g.iter_mut().zip(x).for_each(|(g, &xi)| *g = c * xi);
        }
        // y log p̂ + (1−y) log(1−p̂) = y z − log(1 + e^z)
        y[0] * z - softplus(z)
    }

    /// Class probabilities `(1 − p̂, p̂)`.
    fn predict(&self, theta: &[T], x: &[T]) -> Result<Vec<T>> {
        check_dim(self.dim, x.len())?;
        let p = sigmoid(linalg::dot(x, theta));
        Ok(vec![T::one() - p, p])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::models::{synthetic_logistic, Dataset};
    use crate::rng::RngStream;

    #[test]
    fn zero_weights_give_log_half_per_row() {
        let (d, _) = synthetic_logistic::<f64>(17, 3, &mut RngStream::new(1));
        let ll = ProbModel::<f64>::log_lik(&LogisticRegression::new(3), &[0.0; 3], &d).unwrap();
        assert!((ll - 17.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_regression_targets() {
        let d = Dataset::new(Matrix::from_rows(&[vec![1.0]]), Matrix::from_rows(&[vec![0.5]]), Task::Regression).unwrap();
        assert!(ProbModel::<f64>::log_lik(&LogisticRegression::new(1), &[0.0], &d).is_err());
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let m = LogisticRegression::new(1);
        let ll: f64 = m.row_log_lik(&[800.0], &[1.0], &[0.0], None);
        assert!(ll.is_finite() && (ll + 800.0).abs() < 1e-9);
    }
}
