//! Exact natural-gradient methods over Gaussian posteriors: NGVI, the
//! variational online Newton family (VON, VADAM, VOGN) and QBVI.

use serde::{Deserialize, Serialize};

use crate::diagnostics::ElboEstimate;
use crate::error::{check_dim, Error, Result};
use crate::gaussian::{CovRepr, GaussianVariational};
use crate::linalg::{self, Cholesky, Matrix};
use crate::models::{Dataset, GaussianPrior, Posterior};
use crate::optim::{check_samples, likelihood_scale, Batcher, StepReport, VariationalOptimizer, MAX_HALVINGS};
use crate::rng::RngStream;
use crate::scalar::Real;

// ---- NGVI -------------------------------------------------------------------

/// Precision of the current Gaussian: a full Cholesky factor or a positive vector.
#[derive(Clone, Debug, PartialEq)]
pub enum Precision<T> {
    Full(Cholesky<T>),
    Diagonal(Vec<T>),
}

/// Mean and precision owned by NGVI and QBVI.
#[derive(Clone, Debug, PartialEq)]
pub struct NgviState<T> {
    pub mean: Vec<T>,
    pub precision: Precision<T>,
    pub t: usize,
}

impl<T: Real> NgviState<T> {
    pub fn full(mean: Vec<T>, precision: &Matrix<T>) -> Result<Self> {
        check_dim(mean.len(), precision.rows())?;
        Ok(Self { mean, precision: Precision::Full(Cholesky::new(precision)?), t: 0 })
    }

    pub fn diagonal(mean: Vec<T>, precision: Vec<T>) -> Result<Self> {
        check_dim(mean.len(), precision.len())?;
        if precision.iter().any(|p| !(*p > T::zero())) {
            return Err(Error::NotPositiveDefinite("diagonal precision".into()));
        }
        Ok(Self { mean, precision: Precision::Diagonal(precision), t: 0 })
    }

    /// Starts from `q`; `diagonal` keeps only the marginal precisions.
    pub fn from_gaussian(q: &GaussianVariational<T>, diagonal: bool) -> Result<Self> {
        if diagonal {
            Self::diagonal(q.mean().to_vec(), q.variances().iter().map(|v| v.recip()).collect())
        } else {
            Self::full(q.mean().to_vec(), &q.precision())
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.precision, Precision::Diagonal(_))
    }

    pub fn precision_matrix(&self) -> Matrix<T> {
        match &self.precision {
            Precision::Full(c) => c.reconstruct(),
            Precision::Diagonal(p) => Matrix::from_diag(p),
        }
    }

    /// `Σ v`
    pub fn covariance_times(&self, v: &[T]) -> Vec<T> {
        match &self.precision {
            Precision::Full(c) => c.solve(v),
            Precision::Diagonal(p) => v.iter().zip(p).map(|(&x, &p)| x / p).collect(),
        }
    }

    pub fn to_gaussian(&self) -> Result<GaussianVariational<T>> {
        match &self.precision {
            Precision::Full(c) => GaussianVariational::from_precision_cholesky(self.mean.clone(), c.clone()),
            Precision::Diagonal(p) => GaussianVariational::diagonal(self.mean.clone(), p.iter().map(|x| x.recip()).collect()),
        }
    }
}

/// `∇_Σ 𝓛`, full or restricted to the diagonal.
#[derive(Clone, Debug, PartialEq)]
pub enum SigmaGradient<T> {
    Full(Matrix<T>),
    Diagonal(Vec<T>),
}

/// Which covariance multiplies `∇_μ 𝓛` in the mean update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanUpdate {
    /// The one-step-ahead covariance `Σ_{t+1}`.
    #[default]
    Updated,
    /// The current covariance `Σ_t`.
    Current,
}

/// `Σ⁻¹ ← Σ⁻¹ − 2β ∇_Σ 𝓛`, then `μ ← μ + β Σ ∇_μ 𝓛`. A non-SPD precision
/// halves `β` for this step; returns the new state and the number of halvings.
pub fn ngvi_step<T: Real>(
    state: &NgviState<T>,
    grad_mu: &[T],
    grad_sigma: &SigmaGradient<T>,
    beta: T,
    ordering: MeanUpdate,
) -> Result<(NgviState<T>, u32)> {
    check_dim(state.dim(), grad_mu.len())?;
    let mut b = beta;
    for halvings in 0..=MAX_HALVINGS {
        let two_b = b + b;
        let precision = match (&state.precision, grad_sigma) {
            (Precision::Full(c), SigmaGradient::Full(g)) => {
                check_dim(state.dim(), g.rows())?;
                let next = c.reconstruct().sub(&g.symmetrize().scale(two_b)).symmetrize();
                Cholesky::new(&next).ok().map(Precision::Full)
            }
            (Precision::Diagonal(p), SigmaGradient::Diagonal(g)) => {
                check_dim(state.dim(), g.len())?;
                let next: Vec<T> = p.iter().zip(g).map(|(&p, &g)| p - two_b * g).collect();
                next.iter().all(|&v| v > T::zero() && v.is_finite()).then_some(Precision::Diagonal(next))
            }
            _ => return Err(Error::invalid("gradient and precision representations differ")),
        };
        let Some(precision) = precision else {
            b *= T::half();
            continue;
        };
        let mut next = NgviState { mean: state.mean.clone(), precision, t: state.t + 1 };
        let step = match ordering {
            MeanUpdate::Updated => next.covariance_times(grad_mu),
            MeanUpdate::Current => state.covariance_times(grad_mu),
        };
        linalg::axpy(b, &step, &mut next.mean);
        return Ok((next, halvings));
    }
    Err(Error::NotPositiveDefinite("precision update failed after repeated step halving".into()))
}

/// How expectations under `q` inside the gradients are evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expectation {
    /// Monte Carlo over `n_s` draws from `q`.
    #[default]
    Sampled,
    /// Evaluate at the mean; exact for quadratic log-likelihoods.
    AtMean,
}

/// Curvature of `−(1/M) Σ log p(D_i|θ)`: the exact Hessian when available,
/// otherwise the Gauss–Newton diagonal.
fn curvature<T: Real>(problem: &Posterior<'_, T>, theta: &[T], batch: &Dataset<T>) -> Result<SigmaGradient<T>> {
    Ok(match problem.model.hessian(theta, batch) {
        Some(h) => SigmaGradient::Full(h),
        None => SigmaGradient::Diagonal(problem.model.ggn_diag(theta, batch)?),
    })
}

/// `(∇_μ 𝓛, ∇_Σ 𝓛)` for a Gaussian `q` using `∇_μ𝓛 = E[∇ log p(D, θ)]` and
/// `∇_Σ𝓛 = ½ E[∇² log p(D, θ)] + ½ Σ⁻¹`.
pub fn elbo_gradients<T: Real>(
    state: &NgviState<T>,
    problem: &Posterior<'_, T>,
    batch: &Dataset<T>,
    thetas: &[Vec<T>],
) -> Result<(Vec<T>, SigmaGradient<T>)> {
    let k = state.dim();
    let scale = likelihood_scale(problem.data, batch) * T::from_usize_lossy(batch.len());
    let inv = T::from_usize_lossy(thetas.len()).recip();
    let mut g_mu = vec![T::zero(); k];
    let mut h_full = Matrix::zeros(k, k);
    let mut h_diag = vec![T::zero(); k];
    let mut any_full = false;
    for th in thetas {
        let g = problem.model.grad(th, batch)?;
        let gp = problem.prior.grad_log_density(th)?;
        for i in 0..k {
            g_mu[i] += inv * (gp[i] + scale * g[i]);
        }
        match curvature(problem, th, batch)? {
            SigmaGradient::Full(h) => {
                any_full = true;
                h_full.add_scaled(inv, &h);
            }
            SigmaGradient::Diagonal(d) => linalg::axpy(inv, &d, &mut h_diag),
        }
    }
    let p0 = problem.prior.precision_matrix();
    let grad_sigma = if state.is_diagonal() {
        let hd: Vec<T> = if any_full { h_full.diag() } else { h_diag };
        let p = match &state.precision {
            Precision::Diagonal(p) => p.clone(),
            Precision::Full(_) => unreachable!(),
        };
        SigmaGradient::Diagonal(
            (0..k).map(|i| T::half() * (p[i] - p0[(i, i)] - scale * hd[i])).collect(),
        )
    } else {
        let h = if any_full { h_full } else { Matrix::from_diag(&h_diag) };
        SigmaGradient::Full(state.precision_matrix().sub(&p0).sub(&h.scale(scale)).scale(T::half()).symmetrize())
    };
    Ok((g_mu, grad_sigma))
}

fn elbo_terms<T: Real>(q: &GaussianVariational<T>, problem: &Posterior<'_, T>, batch: &Dataset<T>, thetas: &[Vec<T>]) -> Result<ElboEstimate> {
    let scale = likelihood_scale(problem.data, batch);
    let mut terms = Vec::with_capacity(thetas.len());
    for th in thetas {
        let v = problem.prior.log_density(th)? + scale * problem.model.log_lik(th, batch)? - q.log_pdf(th)?;
        terms.push(v.as_f64());
    }
    ElboEstimate::from_terms(&terms)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NgviConfig {
    pub beta: f64,
    pub n_s: usize,
    pub expectation: Expectation,
    pub mean_update: MeanUpdate,
    pub batch_size: Option<usize>,
}

impl Default for NgviConfig {
    fn default() -> Self {
        Self { beta: 0.01, n_s: 16, expectation: Expectation::Sampled, mean_update: MeanUpdate::Updated, batch_size: None }
    }
}

/// NGVI with gradients from reparametrized draws and model curvature.
pub struct Ngvi<T> {
    state: NgviState<T>,
    cfg: NgviConfig,
    rng: RngStream,
    batcher: Batcher,
}

impl<T: Real> Ngvi<T> {
    pub fn new(state: NgviState<T>, cfg: NgviConfig, rng: &RngStream) -> Result<Self> {
        if !(cfg.beta > 0.0) {
            return Err(Error::invalid("beta must be positive"));
        }
        check_samples(cfg.n_s, 1)?;
        let batcher = Batcher::new(cfg.batch_size, rng.split("minibatch-order"));
        Ok(Self { state, cfg, rng: rng.split("posterior-draws"), batcher })
    }

    pub fn state(&self) -> &NgviState<T> {
        &self.state
    }
}

impl<T: Real> VariationalOptimizer<T> for Ngvi<T> {
    fn name(&self) -> &'static str {
        "ngvi"
    }

    fn step(&mut self, problem: &Posterior<'_, T>) -> Result<StepReport> {
        let batch = self.batcher.next(problem.data);
        let q = self.state.to_gaussian()?;
        let draws: Vec<Vec<T>> = (0..self.cfg.n_s).map(|_| q.sample_one(&mut self.rng)).collect();
        let at_mean = [self.state.mean.clone()];
        let points: &[Vec<T>] = match self.cfg.expectation {
            Expectation::Sampled => &draws,
            Expectation::AtMean => &at_mean,
        };
        let (g_mu, g_sigma) = elbo_gradients(&self.state, problem, &batch, points)?;
        let est = elbo_terms(&q, problem, &batch, &draws)?;
        let (next, halvings) = ngvi_step(&self.state, &g_mu, &g_sigma, T::lit(self.cfg.beta), self.cfg.mean_update)?;
        self.state = next;
        Ok(StepReport {
            elbo: Some(est.value),
            elbo_stderr: Some(est.stderr).filter(|s| s.is_finite()),
            draws_dropped: est.dropped,
            step_halvings: halvings,
            ..StepReport::default()
        })
    }

    fn posterior(&self) -> Result<GaussianVariational<T>> {
        self.state.to_gaussian()
    }

    fn iteration(&self) -> usize {
        self.state.t
    }
}

// ---- VON family ---------------------------------------------------------------

/// State shared by VON, VADAM and VOGN. The posterior is
/// `N(μ, diag(1/(N(s + λ̃))))` with `λ̃` the prior precision divided by `N`.
#[derive(Clone, Debug, PartialEq)]
pub struct VonState<T> {
    pub mu: Vec<T>,
    pub s: Vec<T>,
    pub lambda_tilde: Vec<T>,
    pub prior_mean: Vec<T>,
    pub n: usize,
    pub m: Vec<T>,
    pub t: usize,
}

impl<T: Real> VonState<T> {
    /// `λ̃ = diag(P₀)/N`; the prior precision must be diagonal.
    pub fn new(mu: Vec<T>, s_init: T, prior: &GaussianPrior<T>, n: usize) -> Result<Self> {
        check_dim(prior.dim(), mu.len())?;
        if n == 0 {
            return Err(Error::Data("VON-family methods need a non-empty dataset".into()));
        }
        if prior.tau().is_none() {
            let p0 = prior.precision_matrix();
            let off = (0..p0.rows()).flat_map(|i| (0..p0.cols()).map(move |j| (i, j))).any(|(i, j)| i != j && p0[(i, j)] != T::zero());
            if off {
                return Err(Error::invalid("VON-family methods need a diagonal prior precision"));
            }
        }
        let nt = T::from_usize_lossy(n);
        let lambda_tilde: Vec<T> = prior.precision_diag().iter().map(|&p| p / nt).collect();
        let k = mu.len();
        let state = Self { mu, s: vec![s_init; k], lambda_tilde, prior_mean: prior.mean().to_vec(), n, m: vec![T::zero(); k], t: 0 };
        if state.s.iter().zip(&state.lambda_tilde).any(|(&s, &l)| !(s + l > T::zero())) {
            return Err(Error::invalid("s + λ̃ must be positive"));
        }
        Ok(state)
    }

    /// Posterior variances `1/(N(s + λ̃))`.
    pub fn variances(&self) -> Vec<T> {
        let n = T::from_usize_lossy(self.n);
        self.s.iter().zip(&self.lambda_tilde).map(|(&s, &l)| (n * (s + l)).recip()).collect()
    }

    pub fn to_gaussian(&self) -> Result<GaussianVariational<T>> {
        GaussianVariational::diagonal(self.mu.clone(), self.variances())
    }

    fn draw(&self, rng: &mut RngStream) -> Vec<T> {
        let eps: Vec<T> = rng.normal_vec(self.mu.len());
        self.mu.iter().zip(self.variances()).zip(eps).map(|((&m, v), e)| m + v.sqrt() * e).collect()
    }

    /// `λ̃ ⊙ (μ − μ₀)`
    fn prior_pull(&self) -> Vec<T> {
        (0..self.mu.len()).map(|i| self.lambda_tilde[i] * (self.mu[i] - self.prior_mean[i])).collect()
    }

    /// Keeps `s + λ̃ ≥ 1e-12`; returns whether clipping happened.
    fn clip_s(&mut self) -> bool {
        let floor = T::lit(1e-12);
        let mut clipped = false;
        for (s, &l) in self.s.iter_mut().zip(&self.lambda_tilde) {
            if !(*s + l > T::zero()) {
                *s = floor - l;
                clipped = true;
            }
        }
        clipped
    }
}

fn one_draw_elbo<T: Real>(state: &VonState<T>, problem: &Posterior<'_, T>, theta: &[T], scaled_ll: T) -> Result<Option<f64>> {
    let q = state.to_gaussian()?;
    let v = problem.prior.log_density(theta)? + scaled_ll - q.log_pdf(theta)?;
    Ok(Some(v.as_f64()).filter(|v| v.is_finite()))
}

/// Variational online Newton step: `s ← (1−β)s + β diag H(θ)`,
/// `μ ← μ − β (g(θ) + λ̃μ)/(s + λ̃)` with `θ ~ q` (or `θ = μ`).
pub fn von_step<T: Real>(
    state: &VonState<T>,
    problem: &Posterior<'_, T>,
    batch: &Dataset<T>,
    beta: T,
    expectation: Expectation,
    rng: &mut RngStream,
) -> Result<(VonState<T>, StepReport)> {
    if batch.is_empty() {
        return Err(Error::Data("empty mini-batch".into()));
    }
    let theta = match expectation {
        Expectation::Sampled => state.draw(rng),
        Expectation::AtMean => state.mu.clone(),
    };
    let (ll, g) = problem.model.log_lik_and_grad(&theta, batch)?;
    let h = match curvature(problem, &theta, batch)? {
        SigmaGradient::Full(h) => h.diag(),
        SigmaGradient::Diagonal(d) => d,
    };
    let mut next = state.clone();
    next.t += 1;
    for i in 0..next.s.len() {
        next.s[i] = (T::one() - beta) * state.s[i] + beta * h[i];
    }
    let safeguard = next.clip_s();
    if safeguard {
        log::warn!("von: s + λ̃ ≤ 0 at iteration {}, clipped", next.t);
    }
    let pull = state.prior_pull();
    for i in 0..next.mu.len() {
        // g is the mean log-likelihood gradient, so ĝ = −g
        next.mu[i] = state.mu[i] - beta * (-g[i] + pull[i]) / (next.s[i] + next.lambda_tilde[i]);
    }
    let elbo = match expectation {
        Expectation::Sampled => one_draw_elbo(state, problem, &theta, likelihood_scale(problem.data, batch) * ll)?,
        Expectation::AtMean => None,
    };
    Ok((next, StepReport { elbo, safeguard, ..StepReport::default() }))
}

/// VADAM step with bias-corrected moment estimates.
pub fn vadam_step<T: Real>(
    state: &VonState<T>,
    problem: &Posterior<'_, T>,
    batch: &Dataset<T>,
    beta: T,
    gamma1: T,
    gamma2: T,
    rng: &mut RngStream,
) -> Result<(VonState<T>, StepReport)> {
    if batch.is_empty() {
        return Err(Error::Data("empty mini-batch".into()));
    }
    let theta = state.draw(rng);
    let (ll, g) = problem.model.log_lik_and_grad(&theta, batch)?;
    let mut next = state.clone();
    next.t += 1;
    let c1 = T::one() - gamma1.powi(next.t as i32);
    let c2 = T::one() - gamma2.powi(next.t as i32);
    let pull = state.prior_pull();
    for i in 0..next.mu.len() {
        let gh = -g[i];
        next.m[i] = gamma1 * state.m[i] + (T::one() - gamma1) * (gh + pull[i]);
        next.s[i] = gamma2 * state.s[i] + (T::one() - gamma2) * gh * gh;
        let m_hat = next.m[i] / c1;
        let s_hat = next.s[i] / c2;
        next.mu[i] = state.mu[i] - beta * m_hat / (s_hat.sqrt() + next.lambda_tilde[i]);
    }
    let safeguard = next.clip_s();
    let elbo = one_draw_elbo(state, problem, &theta, likelihood_scale(problem.data, batch) * ll)?;
    Ok((next, StepReport { elbo, safeguard, ..StepReport::default() }))
}

/// Per-sample versus mini-batch Gauss–Newton estimates from per-row gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct HessianEstimates<T> {
    /// `(1/M) Σ g_i²`
    pub per_sample: Vec<T>,
    /// `((1/M) Σ g_i)²`
    pub minibatch: Vec<T>,
}

pub fn hessian_estimates<T: Real>(per_sample_grads: &Matrix<T>) -> Result<HessianEstimates<T>> {
    if per_sample_grads.rows() == 0 {
        return Err(Error::Data("empty mini-batch".into()));
    }
    let mean = linalg::column_means(per_sample_grads);
    Ok(HessianEstimates {
        per_sample: linalg::column_means(&per_sample_grads.map(|g| g * g)),
        minibatch: mean.iter().map(|&g| g * g).collect(),
    })
}

/// VOGN step with per-sample Gauss–Newton curvature averaged over `n_s` draws.
pub fn vogn_step<T: Real>(
    state: &VonState<T>,
    problem: &Posterior<'_, T>,
    batch: &Dataset<T>,
    beta: T,
    beta1: T,
    beta2: T,
    n_s: usize,
    rng: &mut RngStream,
) -> Result<(VonState<T>, StepReport)> {
    check_samples(n_s, 1)?;
    if batch.is_empty() {
        return Err(Error::Data("empty mini-batch".into()));
    }
    let k = state.mu.len();
    let inv = T::from_usize_lossy(n_s).recip();
    let mut g_hat = vec![T::zero(); k];
    let mut h_hat = vec![T::zero(); k];
    let scale = likelihood_scale(problem.data, batch);
    let mut elbos = Vec::with_capacity(n_s);
    for _ in 0..n_s {
        let theta = state.draw(rng);
        let (lls, grads) = problem.model.per_sample(&theta, batch)?;
        // g_i = −∇ log p(D_i|θ); the squares are sign-free
        let est = hessian_estimates(&grads)?;
        let mean = linalg::column_means(&grads);
        linalg::axpy(-inv, &mean, &mut g_hat);
        linalg::axpy(inv, &est.per_sample, &mut h_hat);
        if let Some(e) = one_draw_elbo(state, problem, &theta, scale * lls.into_iter().sum::<T>())? {
            elbos.push(e);
        }
    }
    let mut next = state.clone();
    next.t += 1;
    let pull = state.prior_pull();
    for i in 0..k {
        next.m[i] = beta1 * state.m[i] + (g_hat[i] + pull[i]);
        next.s[i] = (T::one() - beta2) * state.s[i] + beta2 * h_hat[i];
    }
    let safeguard = next.clip_s();
    for i in 0..k {
        next.mu[i] = state.mu[i] - beta * next.m[i] / (next.s[i] + next.lambda_tilde[i]);
    }
    let (elbo, elbo_stderr) = match ElboEstimate::from_terms(&elbos) {
        Ok(e) => (Some(e.value), Some(e.stderr).filter(|s| s.is_finite())),
        Err(_) => (None, None),
    };
    Ok((next, StepReport { elbo, elbo_stderr, safeguard, ..StepReport::default() }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VonVariant {
    Von,
    Vadam,
    Vogn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VonConfig {
    pub variant: VonVariant,
    pub beta: f64,
    /// `γ₁` for VADAM, `β₁` for VOGN.
    pub beta1: f64,
    /// `γ₂` for VADAM, `β₂` for VOGN.
    pub beta2: f64,
    /// Posterior draws per VOGN step.
    pub n_s: usize,
    pub batch_size: Option<usize>,
    pub s_init: f64,
    /// VON only: sample `θ` or evaluate at the mean.
    pub expectation: Expectation,
}

impl VonConfig {
    pub fn new(variant: VonVariant) -> Self {
        Self {
            variant,
            beta: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            n_s: 16,
            batch_size: None,
            s_init: 0.0,
            expectation: Expectation::Sampled,
        }
    }
}

/// VON, VADAM or VOGN behind the common optimizer interface.
pub struct Von<T> {
    state: VonState<T>,
    cfg: VonConfig,
    rng: RngStream,
    batcher: Batcher,
}

impl<T: Real> Von<T> {
    pub fn new(state: VonState<T>, cfg: VonConfig, rng: &RngStream) -> Result<Self> {
        if !(cfg.beta > 0.0) {
            return Err(Error::invalid("beta must be positive"));
        }
        if cfg.variant != VonVariant::Von {
            for (name, v) in [("beta1", cfg.beta1), ("beta2", cfg.beta2)] {
                if !(0.0..1.0).contains(&v) {
                    return Err(Error::invalid(format!("{name} must lie in [0, 1)")));
                }
            }
        }
        check_samples(cfg.n_s, 1)?;
        let batcher = Batcher::new(cfg.batch_size, rng.split("minibatch-order"));
        Ok(Self { state, cfg, rng: rng.split("posterior-draws"), batcher })
    }

    pub fn state(&self) -> &VonState<T> {
        &self.state
    }
}

impl<T: Real> VariationalOptimizer<T> for Von<T> {
    fn name(&self) -> &'static str {
        match self.cfg.variant {
            VonVariant::Von => "von",
            VonVariant::Vadam => "vadam",
            VonVariant::Vogn => "vogn",
        }
    }

    fn step(&mut self, problem: &Posterior<'_, T>) -> Result<StepReport> {
        let batch = self.batcher.next(problem.data);
        let (beta, b1, b2) = (T::lit(self.cfg.beta), T::lit(self.cfg.beta1), T::lit(self.cfg.beta2));
        let (next, report) = match self.cfg.variant {
            VonVariant::Von => von_step(&self.state, problem, &batch, beta, self.cfg.expectation, &mut self.rng)?,
            VonVariant::Vadam => vadam_step(&self.state, problem, &batch, beta, b1, b2, &mut self.rng)?,
            VonVariant::Vogn => vogn_step(&self.state, problem, &batch, beta, b1, b2, self.cfg.n_s, &mut self.rng)?,
        };
        self.state = next;
        Ok(report)
    }

    fn posterior(&self) -> Result<GaussianVariational<T>> {
        self.state.to_gaussian()
    }

    fn iteration(&self) -> usize {
        self.state.t
    }
}

// ---- QBVI -------------------------------------------------------------------

/// Score-function natural-gradient estimates used by QBVI.
#[derive(Clone, Debug, PartialEq)]
pub struct QbviGradients<T> {
    /// `mean_s (Σ⁻¹ − v vᵀ)·w_s`
    pub g_sigma: Matrix<T>,
    /// `mean_s v·w_s`
    pub g_mu: Vec<T>,
    pub elbo: ElboEstimate,
}

/// `v = Σ⁻¹(θ_s − μ)` and weight `w_s = log p(D|θ_s) − b`, where the optional
/// baseline `b = log p(D|μ)` leaves the estimator unbiased.
pub fn qbvi_gradients<T: Real>(
    state: &NgviState<T>,
    problem: &Posterior<'_, T>,
    n_s: usize,
    baseline: bool,
    rng: &mut RngStream,
) -> Result<QbviGradients<T>> {
    check_samples(n_s, 2)?;
    let q = state.to_gaussian()?;
    let k = state.dim();
    let p = state.precision_matrix();
    let b = if baseline { problem.model.log_lik(&state.mean, problem.data)? } else { T::zero() };
    let mut g_sigma = Matrix::zeros(k, k);
    let mut g_mu = vec![T::zero(); k];
    let mut terms = Vec::with_capacity(n_s);
    let mut used = 0usize;
    for _ in 0..n_s {
        let th = q.sample_one(rng);
        let ll = problem.model.log_lik(&th, problem.data)?;
        terms.push((ll + problem.prior.log_density(&th)? - q.log_pdf(&th)?).as_f64());
        if !ll.is_finite() {
            continue;
        }
        used += 1;
        let v = q.precision_times(&linalg::sub(&th, &state.mean));
        let w = ll - b;
        g_sigma.add_scaled(w, &p.sub(&Matrix::outer(&v, &v)));
        linalg::axpy(w, &v, &mut g_mu);
    }
    if used == 0 {
        return Err(Error::NonFinite("log-likelihood at every QBVI draw".into()));
    }
    let inv = T::from_usize_lossy(used).recip();
    Ok(QbviGradients { g_sigma: g_sigma.scale(inv).symmetrize(), g_mu: linalg::scale(&g_mu, inv), elbo: ElboEstimate::from_terms(&terms)? })
}

/// `Σ⁻¹ ← (1−β)Σ⁻¹ + β(Σ₀⁻¹ + ĝ_Σ)`, `μ ← μ + β Σ [Σ₀⁻¹(μ₀ − μ) + ĝ_μ]`.
pub fn qbvi_update<T: Real>(
    state: &NgviState<T>,
    prior: &GaussianPrior<T>,
    grads: &QbviGradients<T>,
    beta: T,
    ordering: MeanUpdate,
) -> Result<(NgviState<T>, u32)> {
    if state.is_diagonal() {
        return Err(Error::invalid("QBVI owns a full precision"));
    }
    let p = state.precision_matrix();
    let target = prior.precision_matrix().add(&grads.g_sigma);
    let mut b = beta;
    for halvings in 0..=MAX_HALVINGS {
        let next_p = p.scale(T::one() - b).add(&target.scale(b)).symmetrize();
        let Ok(chol) = Cholesky::new(&next_p) else {
            b *= T::half();
            continue;
        };
        let mut next = NgviState { mean: state.mean.clone(), precision: Precision::Full(chol), t: state.t + 1 };
        let mut dir = prior.precision_times(&linalg::sub(prior.mean(), &state.mean));
        linalg::axpy(T::one(), &grads.g_mu, &mut dir);
        let step = match ordering {
            MeanUpdate::Updated => next.covariance_times(&dir),
            MeanUpdate::Current => state.covariance_times(&dir),
        };
        linalg::axpy(b, &step, &mut next.mean);
        return Ok((next, halvings));
    }
    Err(Error::NotPositiveDefinite("QBVI precision update failed after repeated step halving".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QbviConfig {
    pub beta: f64,
    pub n_s: usize,
    pub baseline: bool,
    pub mean_update: MeanUpdate,
}

impl Default for QbviConfig {
    fn default() -> Self {
        Self { beta: 0.01, n_s: 16, baseline: true, mean_update: MeanUpdate::Updated }
    }
}

pub struct Qbvi<T> {
    state: NgviState<T>,
    cfg: QbviConfig,
    rng: RngStream,
}

impl<T: Real> Qbvi<T> {
    pub fn new(state: NgviState<T>, cfg: QbviConfig, rng: &RngStream) -> Result<Self> {
        if !(cfg.beta > 0.0) {
            return Err(Error::invalid("beta must be positive"));
        }
        check_samples(cfg.n_s, 2)?;
        if state.is_diagonal() {
            return Err(Error::invalid("QBVI owns a full precision"));
        }
        Ok(Self { state, cfg, rng: rng.split("posterior-draws") })
    }

    pub fn state(&self) -> &NgviState<T> {
        &self.state
    }
}

impl<T: Real> VariationalOptimizer<T> for Qbvi<T> {
    fn name(&self) -> &'static str {
        "qbvi"
    }

    fn step(&mut self, problem: &Posterior<'_, T>) -> Result<StepReport> {
        let grads = qbvi_gradients(&self.state, problem, self.cfg.n_s, self.cfg.baseline, &mut self.rng)?;
        let (next, halvings) = qbvi_update(&self.state, problem.prior, &grads, T::lit(self.cfg.beta), self.cfg.mean_update)?;
        self.state = next;
        Ok(StepReport {
            elbo: Some(grads.elbo.value),
            elbo_stderr: Some(grads.elbo.stderr).filter(|s| s.is_finite()),
            draws_dropped: grads.elbo.dropped,
            step_halvings: halvings,
            ..StepReport::default()
        })
    }

    fn posterior(&self) -> Result<GaussianVariational<T>> {
        self.state.to_gaussian()
    }

    fn iteration(&self) -> usize {
        self.state.t
    }
}

/// Starting precision state from a prior, in the representation a method owns.
pub fn state_from_prior<T: Real>(prior: &GaussianPrior<T>, diagonal: bool) -> Result<NgviState<T>> {
    NgviState::from_gaussian(&prior.to_gaussian(CovRepr::FullCholeskyOfPrecision)?, diagonal)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_state_unchanged() {
        let s = NgviState::full(vec![0.3, -0.1], &Matrix::from_rows(&[vec![2.0, 0.4], vec![0.4, 1.0]])).unwrap();
        let (n, h) = ngvi_step(&s, &[0.0, 0.0], &SigmaGradient::Full(Matrix::zeros(2, 2)), 0.5, MeanUpdate::Updated).unwrap();
        assert_eq!(h, 0);
        assert_eq!(n.mean, s.mean);
        assert!(n.precision_matrix().sub(&s.precision_matrix()).max_abs() < 1e-15);
    }

    #[test]
    fn scalar_precision_contracts_geometrically() {
        // exact ∇_σ² 𝓛 = ½(p − p*) so p ← p − β(p − p*)
        let target = 5.0;
        let mut s = NgviState::<f64>::diagonal(vec![0.0], vec![1.0]).unwrap();
        let mut prev_err = 4.0f64;
        for _ in 0..10 {
            let p = match &s.precision {
                Precision::Diagonal(p) => p[0],
                _ => unreachable!(),
            };
            let g = SigmaGradient::Diagonal(vec![0.5 * (p - target)]);
            s = ngvi_step(&s, &[0.0], &g, 0.5, MeanUpdate::Updated).unwrap().0;
            let err = (s.precision_matrix()[(0, 0)] - target).abs();
            assert!((err / prev_err - 0.5).abs() < 1e-12);
            prev_err = err;
        }
    }

    #[test]
    fn non_spd_update_halves_the_step() {
        let s = NgviState::diagonal(vec![0.0], vec![1.0]).unwrap();
        // β = 1 would give 1 − 2·1 = −1
        let (n, h) = ngvi_step(&s, &[0.0], &SigmaGradient::Diagonal(vec![1.0]), 1.0, MeanUpdate::Updated).unwrap();
        assert!(h >= 2);
        assert!(n.precision_matrix()[(0, 0)] > 0.0);
    }

    #[test]
    fn vogn_bias_two_point_example() {
        let g = Matrix::from_rows(&[vec![1.0], vec![-1.0]]);
        let e = hessian_estimates(&g).unwrap();
        assert_eq!(e.per_sample, vec![1.0]);
        assert_eq!(e.minibatch, vec![0.0]);
        let single = Matrix::from_rows(&[vec![0.7]]);
        let e1 = hessian_estimates(&single).unwrap();
        assert_eq!(e1.per_sample, e1.minibatch);
    }
}
