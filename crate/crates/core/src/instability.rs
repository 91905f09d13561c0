//! Fitting a one-dimensional Gaussian `N(μ, σ²)` to draws from `N(m, s²)`:
//! plain gradient steps on `(μ, σ)` scale like `1/σ³` and blow up from a
//! small starting `σ`, while the natural-gradient step is well conditioned.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::natgrad::{ngvi_step, MeanUpdate, NgviState, SigmaGradient};
use crate::rng::RngStream;

/// Magnitude of `σ` beyond which a run counts as diverged.
pub const DIVERGENCE_SIGMA: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyProblem {
    /// Mean of the data-generating Gaussian.
    pub target_mean: f64,
    pub target_std: f64,
    pub init_mean: f64,
    pub init_std: f64,
    pub beta: f64,
    /// Draws averaged into each gradient estimate.
    pub population: usize,
    pub iterations: usize,
}

impl Default for ToyProblem {
    fn default() -> Self {
        Self { target_mean: 3.0, target_std: 1.0, init_mean: 0.0, init_std: 0.05, beta: 0.05, population: 200, iterations: 2000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyOutcome {
    pub mu: f64,
    pub sigma: f64,
    /// `|σ|` exceeded the divergence threshold or an iterate became non-finite.
    pub diverged: bool,
    /// First iteration at which divergence was flagged.
    pub diverged_at: Option<usize>,
    pub iterations: usize,
}

impl ToyOutcome {
    /// Final iterate within `tol` of the target in both mean and standard deviation.
    pub fn converged(&self, p: &ToyProblem, tol: f64) -> bool {
        !self.diverged && (self.mu - p.target_mean).abs() < tol && (self.sigma - p.target_std).abs() < tol
    }
}

impl ToyProblem {
    fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.init_std > 0.0 && self.target_std > 0.0) || self.population == 0 {
            return Err(Error::invalid("toy problem needs positive beta, scales and population"));
        }
        Ok(())
    }

    fn draws(&self, rng: &mut RngStream) -> Vec<f64> {
        (0..self.population).map(|_| self.target_mean + self.target_std * rng.standard_normal()).collect()
    }

    /// Population means of `(z−μ)/σ²` and `((z−μ)² − σ²)/σ³`.
    pub fn euclidean_gradient(mu: f64, sigma: f64, z: &[f64]) -> (f64, f64) {
        let n = z.len() as f64;
        let s2 = sigma * sigma;
        let g_mu = z.iter().map(|&z| (z - mu) / s2).sum::<f64>() / n;
        let g_sigma = z.iter().map(|&z| ((z - mu).powi(2) - s2) / (s2 * sigma)).sum::<f64>() / n;
        (g_mu, g_sigma)
    }

    /// Plain gradient ascent `(μ, σ) ← (μ, σ) + β ∇`.
    pub fn run_sgd(&self, rng: &mut RngStream) -> Result<ToyOutcome> {
        self.validate()?;
        let (mut mu, mut sigma) = (self.init_mean, self.init_std);
        for t in 0..self.iterations {
            let (g_mu, g_sigma) = Self::euclidean_gradient(mu, sigma, &self.draws(rng));
            mu += self.beta * g_mu;
            sigma += self.beta * g_sigma;
            if !(mu.is_finite() && sigma.is_finite()) || sigma.abs() > DIVERGENCE_SIGMA {
                return Ok(ToyOutcome { mu, sigma, diverged: true, diverged_at: Some(t + 1), iterations: t + 1 });
            }
        }
        Ok(ToyOutcome { mu, sigma, diverged: false, diverged_at: None, iterations: self.iterations })
    }

    /// NGVI on the precision with the same `β`: gradients with respect to
    /// `(μ, σ²)` drive `σ⁻² ← σ⁻² − 2β∇_{σ²}` and `μ ← μ + βσ²∇_μ`.
    pub fn run_ngvi(&self, rng: &mut RngStream) -> Result<ToyOutcome> {
        self.validate()?;
        let mut state = NgviState::diagonal(vec![self.init_mean], vec![self.init_std.powi(-2)])?;
        for t in 0..self.iterations {
            let mu = state.mean[0];
            let var = state.to_gaussian()?.variances()[0];
            let z = self.draws(rng);
            let n = z.len() as f64;
            let g_mu = z.iter().map(|&z| (z - mu) / var).sum::<f64>() / n;
            let g_var = z.iter().map(|&z| ((z - mu).powi(2) - var) / (2.0 * var * var)).sum::<f64>() / n;
            state = ngvi_step(&state, &[g_mu], &SigmaGradient::Diagonal(vec![g_var]), self.beta, MeanUpdate::Updated)?.0;
            let sigma = state.to_gaussian()?.variances()[0].sqrt();
            if !(state.mean[0].is_finite() && sigma.is_finite()) || sigma > DIVERGENCE_SIGMA {
                return Ok(ToyOutcome { mu: state.mean[0], sigma, diverged: true, diverged_at: Some(t + 1), iterations: t + 1 });
            }
        }
        let sigma = state.to_gaussian()?.variances()[0].sqrt();
        Ok(ToyOutcome { mu: state.mean[0], sigma, diverged: false, diverged_at: None, iterations: self.iterations })
    }
}
