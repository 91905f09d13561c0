//! The interface every variational optimizer implements, plus shared
//! plumbing: mini-batching, learning-rate schedules and step reports.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianVariational;
use crate::models::{Dataset, Posterior};
use crate::rng::RngStream;
use crate::scalar::Real;

/// Diagnostics emitted by one optimizer step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// ELBO estimate computed as a by-product of the step, if any.
    pub elbo: Option<f64>,
    pub elbo_stderr: Option<f64>,
    /// How many times the step size was halved to keep the update valid.
    pub step_halvings: u32,
    /// The update was discarded and the state left unchanged.
    pub rejected: bool,
    /// Monte Carlo draws discarded because a term was not finite.
    pub draws_dropped: usize,
    /// A gradient or curvature safeguard modified the update.
    pub safeguard: bool,
}

/// A stateful optimizer over a Gaussian variational posterior.
pub trait VariationalOptimizer<T: Real> {
    fn name(&self) -> &'static str;

    /// Performs one iteration against the unnormalized posterior.
    fn step(&mut self, problem: &Posterior<'_, T>) -> Result<StepReport>;

    /// The current variational posterior.
    fn posterior(&self) -> Result<GaussianVariational<T>>;

    /// Number of completed steps.
    fn iteration(&self) -> usize;
}

/// Step-size schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LearningRate {
    Constant { beta: f64 },
    /// `β₀ / (1 + t)^κ`
    RobbinsMonro { beta0: f64, kappa: f64 },
}

impl LearningRate {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            LearningRate::Constant { beta } => beta,
            LearningRate::RobbinsMonro { beta0, kappa } => beta0 / (1.0 + t as f64).powf(kappa),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LearningRate::Constant { beta } => beta > 0.0 && beta.is_finite(),
            LearningRate::RobbinsMonro { beta0, kappa } => beta0 > 0.0 && beta0.is_finite() && kappa > 0.5 && kappa <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid learning rate {self:?}")))
        }
    }
}

/// Draws mini-batches epoch by epoch from its own random stream.
#[derive(Clone, Debug)]
pub struct Batcher {
    batch_size: Option<usize>,
    rng: RngStream,
    pending: Vec<Vec<usize>>,
}

impl Batcher {
    /// `None` always yields the full dataset.
    pub fn new(batch_size: Option<usize>, rng: RngStream) -> Self {
        Self { batch_size, rng, pending: Vec::new() }
    }

    pub fn full() -> Self {
        Self::new(None, RngStream::new(0))
    }

    pub fn next<'d, T: Real>(&mut self, data: &'d Dataset<T>) -> Cow<'d, Dataset<T>> {
        match self.batch_size {
            Some(b) if b < data.len() => {
                if self.pending.is_empty() {
                    self.pending = data.epoch_batches(b, &mut self.rng);
                    self.pending.reverse();
                }
                let idx = self.pending.pop().expect("non-empty epoch");
                Cow::Owned(data.subset(&idx))
            }
            _ => Cow::Borrowed(data),
        }
    }
}

/// `N / M`, the factor scaling a batch log-likelihood to the full dataset.
pub(crate) fn likelihood_scale<T: Real>(full: &Dataset<T>, batch: &Dataset<T>) -> T {
    if batch.is_empty() {
        T::zero()
    } else {
        T::from_usize_lossy(full.len()) / T::from_usize_lossy(batch.len())
    }
}

pub(crate) fn check_samples(n_s: usize, min: usize) -> Result<()> {
    if n_s < min {
        return Err(Error::invalid(format!("n_s must be at least {min}, got {n_s}")));
    }
    Ok(())
}

/// Upper bound on consecutive step-size halvings before giving up.
pub(crate) const MAX_HALVINGS: u32 = 40;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::synthetic_linear;

    #[test]
    fn robbins_monro_schedule() {
        let lr = LearningRate::RobbinsMonro { beta0: 1.0, kappa: 0.6 };
        assert_eq!(lr.at(0), 1.0);
        assert!((lr.at(9) - 10f64.powf(-0.6)).abs() < 1e-15);
        assert!(LearningRate::RobbinsMonro { beta0: 1.0, kappa: 0.4 }.validate().is_err());
        assert!(LearningRate::Constant { beta: 0.0 }.validate().is_err());
    }

    #[test]
    fn batcher_covers_each_row_once_per_epoch() {
        let (data, _) = synthetic_linear::<f64>(10, 1, 1.0, &mut RngStream::new(1));
        let mut b = Batcher::new(Some(3), RngStream::new(2));
        let mut seen: Vec<f64> = Vec::new();
        for _ in 0..4 {
            let batch = b.next(&data);
            seen.extend(batch.inputs().as_slice());
        }
        seen.sort_by(f64::total_cmp);
        let mut all = data.inputs().as_slice().to_vec();
        all.sort_by(f64::total_cmp);
        assert_eq!(seen, all);
        assert!(matches!(Batcher::full().next(&data), Cow::Borrowed(_)));
    }
}
