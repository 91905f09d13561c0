//! Black-box variational inference over diagonal Gaussian posteriors:
//! Bayes by Backprop (reparametrization), BBVI (score function) and NG-BBVI
//! (score function with control variates and a Fisher preconditioner).

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::diagnostics::ElboEstimate;
use crate::error::{check_dim, Error, Result};
use crate::gaussian::GaussianVariational;
use crate::linalg::{self, Cholesky, Matrix};
use crate::models::{Dataset, LogDensity, Posterior};
use crate::optim::{check_samples, likelihood_scale, Batcher, LearningRate, StepReport, VariationalOptimizer, MAX_HALVINGS};
use crate::rng::RngStream;
use crate::scalar::{ln_2pi, sigmoid, softplus, Real};

// ---- Bayes by Backprop ------------------------------------------------------

/// `q(w) = N(μ, diag(σ²))` with `σ = log(1 + exp(ρ))`.
#[derive(Clone, Debug, PartialEq)]
pub struct BbbState<T> {
    pub mu: Vec<T>,
    pub rho: Vec<T>,
    pub t: usize,
}

impl<T: Real> BbbState<T> {
    pub fn new(mu: Vec<T>, rho: Vec<T>) -> Result<Self> {
        check_dim(mu.len(), rho.len())?;
        Ok(Self { mu, rho, t: 0 })
    }

    /// State whose standard deviations equal `sigma`.
    pub fn from_std(mu: Vec<T>, sigma: &[T]) -> Result<Self> {
        check_dim(mu.len(), sigma.len())?;
        if sigma.iter().any(|s| !(*s > T::zero())) {
            return Err(Error::invalid("standard deviations must be positive"));
        }
        // inverse softplus
        let rho = sigma.iter().map(|&s| s + (-(-s).exp_m1()).ln()).collect();
        Self::new(mu, rho)
    }

    pub fn sigma(&self) -> Vec<T> {
        self.rho.iter().map(|&r| softplus(r)).collect()
    }

    pub fn to_gaussian(&self) -> Result<GaussianVariational<T>> {
        GaussianVariational::diagonal(self.mu.clone(), self.sigma().iter().map(|&s| s * s).collect())
    }
}

/// Sampled objective `f = log q(w) − log p(w) − scale·log p(batch|w)` and its
/// gradients for one frozen noise vector.
#[derive(Clone, Debug, PartialEq)]
pub struct BbbGradient<T> {
    pub f: T,
    pub grad_mu: Vec<T>,
    pub grad_rho: Vec<T>,
}

/// Evaluates [`BbbGradient`] at `w = μ + softplus(ρ) ⊙ ε`.
pub fn bbb_gradient<T: Real>(
    state: &BbbState<T>,
    eps: &[T],
    problem: &Posterior<'_, T>,
    batch: &Dataset<T>,
    scale: T,
) -> Result<BbbGradient<T>> {
    check_dim(state.mu.len(), eps.len())?;
    let sigma = state.sigma();
    let w: Vec<T> = state.mu.iter().zip(&sigma).zip(eps).map(|((&m, &s), &e)| m + s * e).collect();
    let (ll, g_ll) = problem.model.log_lik_and_grad(&w, batch)?;
    let n_batch = T::from_usize_lossy(batch.len());
    let log_q: T = sigma
        .iter()
        .zip(eps)
        .map(|(&s, &e)| -T::half() * (ln_2pi::<T>() + e * e) - s.ln())
        .sum();
    let f = log_q - problem.prior.log_density(&w)? - scale * ll;
    let g_prior = problem.prior.grad_log_density(&w)?;
    let k = w.len();
    let mut grad_mu = Vec::with_capacity(k);
    let mut grad_rho = Vec::with_capacity(k);
    for i in 0..k {
        let g_model = g_prior[i] + scale * n_batch * g_ll[i];
        // ∂f/∂w through log q, log p(w) and the likelihood
        let df_dw = -eps[i] / sigma[i] - g_model;
        let dsig = sigmoid(state.rho[i]);
        // explicit dependence of log q on μ and ρ
        let df_dmu = eps[i] / sigma[i];
        let df_drho = (eps[i] * eps[i] - T::one()) / sigma[i] * dsig;
        grad_mu.push(df_dw + df_dmu);
        grad_rho.push(df_dw * eps[i] * dsig + df_drho);
    }
    Ok(BbbGradient { f, grad_mu, grad_rho })
}

/// Configuration for [`Bbb`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BbbConfig {
    pub learning_rate: LearningRate,
    /// Noise draws averaged per step.
    pub n_s: usize,
    pub batch_size: Option<usize>,
}

impl Default for BbbConfig {
    fn default() -> Self {
        Self { learning_rate: LearningRate::Constant { beta: 1e-3 }, n_s: 1, batch_size: None }
    }
}

/// One Bayes-by-Backprop update. A non-finite objective rejects the step;
/// a non-finite update is retried with half the step size.
pub fn bbb_step<T: Real>(
    state: &BbbState<T>,
    problem: &Posterior<'_, T>,
    batch: &Dataset<T>,
    beta: T,
    n_s: usize,
    rng: &mut RngStream,
) -> Result<(BbbState<T>, StepReport)> {
    check_samples(n_s, 1)?;
    let k = state.mu.len();
    let scale = likelihood_scale(problem.data, batch);
    let mut g_mu = vec![T::zero(); k];
    let mut g_rho = vec![T::zero(); k];
    let mut fs = Vec::with_capacity(n_s);
    let mut report = StepReport::default();
    for _ in 0..n_s {
        let eps = rng.normal_vec::<T>(k);
        let g = bbb_gradient(state, &eps, problem, batch, scale)?;
        if !g.f.is_finite() || !linalg::all_finite(&g.grad_mu) || !linalg::all_finite(&g.grad_rho) {
            report.draws_dropped += 1;
            continue;
        }
        linalg::axpy(T::one(), &g.grad_mu, &mut g_mu);
        linalg::axpy(T::one(), &g.grad_rho, &mut g_rho);
        fs.push(-g.f.as_f64());
    }
    let mut next = state.clone();
    next.t += 1;
    if fs.is_empty() {
        log::warn!("bbb: non-finite objective at iteration {}, step rejected", state.t);
        report.rejected = true;
        return Ok((next, report));
    }
    let est = ElboEstimate::from_terms(&fs)?;
    report.elbo = Some(est.value);
    report.elbo_stderr = Some(est.stderr).filter(|s| s.is_finite());
    let inv = T::from_usize_lossy(fs.len()).recip();
    let mut b = beta * inv;
    loop {
        let mu: Vec<T> = state.mu.iter().zip(&g_mu).map(|(&m, &g)| m - b * g).collect();
        let rho: Vec<T> = state.rho.iter().zip(&g_rho).map(|(&r, &g)| r - b * g).collect();
        if linalg::all_finite(&mu) && linalg::all_finite(&rho) {
            next.mu = mu;
            next.rho = rho;
            return Ok((next, report));
        }
        report.step_halvings += 1;
        if report.step_halvings > MAX_HALVINGS {
            report.rejected = true;
            return Ok((next, report));
        }
        b *= T::half();
    }
}

/// Bayes by Backprop optimizer.
pub struct Bbb<T> {
    state: BbbState<T>,
    cfg: BbbConfig,
    rng: RngStream,
    batcher: Batcher,
}

impl<T: Real> Bbb<T> {
    pub fn new(state: BbbState<T>, cfg: BbbConfig, rng: &RngStream) -> Result<Self> {
        cfg.learning_rate.validate()?;
        check_samples(cfg.n_s, 1)?;
        let batcher = Batcher::new(cfg.batch_size, rng.split("minibatch-order"));
        Ok(Self { state, cfg, rng: rng.split("posterior-draws"), batcher })
    }

    pub fn state(&self) -> &BbbState<T> {
        &self.state
    }
}

impl<T: Real> VariationalOptimizer<T> for Bbb<T> {
    fn name(&self) -> &'static str {
        "bbb"
    }

    fn step(&mut self, problem: &Posterior<'_, T>) -> Result<StepReport> {
        let batch = self.batcher.next(problem.data);
        let beta = T::lit(self.cfg.learning_rate.at(self.state.t));
        let (next, report) = bbb_step(&self.state, problem, &batch, beta, self.cfg.n_s, &mut self.rng)?;
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

// ---- Factorized posterior ---------------------------------------------------

/// Product of diagonal Gaussian factors over disjoint parameter blocks,
/// parametrized by means and log standard deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorizedPosterior<T> {
    pub mean: Vec<T>,
    pub log_std: Vec<T>,
    blocks: Vec<Range<usize>>,
}

impl<T: Real> FactorizedPosterior<T> {
    /// `blocks` must be contiguous, disjoint and cover `0..k` in order.
    pub fn new(mean: Vec<T>, log_std: Vec<T>, blocks: Vec<Range<usize>>) -> Result<Self> {
        check_dim(mean.len(), log_std.len())?;
        let mut next = 0;
        for b in &blocks {
            if b.start != next || b.end <= b.start {
                return Err(Error::invalid("factor blocks must partition the parameters in order"));
            }
            next = b.end;
        }
        if next != mean.len() {
            return Err(Error::invalid("factor blocks must cover every parameter"));
        }
        Ok(Self { mean, log_std, blocks })
    }

    /// One factor per parameter.
    pub fn fully_factorized(mean: Vec<T>, log_std: Vec<T>) -> Result<Self> {
        let blocks = (0..mean.len()).map(|i| i..i + 1).collect();
        Self::new(mean, log_std, blocks)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }

    pub fn to_gaussian(&self) -> Result<GaussianVariational<T>> {
        GaussianVariational::diagonal(self.mean.clone(), self.log_std.iter().map(|&l| (l + l).exp()).collect())
    }

    fn log_pdf_range(&self, theta: &[T], r: Range<usize>) -> T {
        r.map(|i| {
            let z = (theta[i] - self.mean[i]) / self.log_std[i].exp();
            -T::half() * (ln_2pi::<T>() + z * z) - self.log_std[i]
        })
        .sum()
    }

    pub fn log_pdf(&self, theta: &[T]) -> T {
        self.log_pdf_range(theta, 0..self.dim())
    }

    pub fn factor_log_pdf(&self, k: usize, theta: &[T]) -> T {
        self.log_pdf_range(theta, self.blocks[k].clone())
    }

    pub fn sample(&self, rng: &mut RngStream) -> Vec<T> {
        self.mean
            .iter()
            .zip(&self.log_std)
            .map(|(&m, &l)| m + l.exp() * T::lit(rng.standard_normal()))
            .collect()
    }

    /// Score with respect to `(μ_i, log σ_i)` for coordinate `i`.
    fn score(&self, i: usize, theta: &[T]) -> (T, T) {
        let var = (self.log_std[i] + self.log_std[i]).exp();
        let d = theta[i] - self.mean[i];
        (d / var, d * d / var - T::one())
    }
}

/// Coordinates in which a 1-D Gaussian score is expressed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreChart {
    MeanLogStd,
    MeanVariance,
}

/// Score of `N(θ | μ, σ²)` in the requested chart.
pub fn score_1d<T: Real>(mu: T, var: T, theta: T, chart: ScoreChart) -> (T, T) {
    let d = theta - mu;
    match chart {
        ScoreChart::MeanLogStd => (d / var, d * d / var - T::one()),
        ScoreChart::MeanVariance => (d / var, (d * d / var - T::one()) / (var + var)),
    }
}

/// Euclidean ELBO gradient in `(μ, log σ)` coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ZetaGradient<T> {
    pub mean: Vec<T>,
    pub log_std: Vec<T>,
}

/// Score-function estimate `(1/n_s) Σ ∇ log q(θ_s)·[log p(D, θ_s) − log q(θ_s)]`,
/// together with the per-draw brackets (the ELBO terms).
pub fn bbvi_gradient<T: Real>(
    post: &FactorizedPosterior<T>,
    target: &dyn LogDensity<T>,
    n_s: usize,
    rng: &mut RngStream,
) -> Result<(ZetaGradient<T>, ElboEstimate)> {
    check_samples(n_s, 2)?;
    check_dim(post.dim(), target.dim())?;
    let k = post.dim();
    let mut g = ZetaGradient { mean: vec![T::zero(); k], log_std: vec![T::zero(); k] };
    let mut terms = Vec::with_capacity(n_s);
    for _ in 0..n_s {
        let th = post.sample(rng);
        let bracket = target.log_density(&th).unwrap_or(T::nan()) - post.log_pdf(&th);
        terms.push(bracket.as_f64());
        if !bracket.is_finite() {
            continue;
        }
        for i in 0..k {
            let (sm, ss) = post.score(i, &th);
            g.mean[i] += sm * bracket;
            g.log_std[i] += ss * bracket;
        }
    }
    let est = ElboEstimate::from_terms(&terms)?;
    let kept = T::from_usize_lossy(n_s - est.dropped);
    g.mean.iter_mut().chain(g.log_std.iter_mut()).for_each(|v| *v /= kept);
    Ok((g, est))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BbviConfig {
    pub learning_rate: LearningRate,
    pub n_s: usize,
}

impl Default for BbviConfig {
    fn default() -> Self {
        Self { learning_rate: LearningRate::RobbinsMonro { beta0: 0.05, kappa: 0.6 }, n_s: 16 }
    }
}

/// Stochastic-gradient ascent on the ELBO with the score-function estimator.
pub struct Bbvi<T> {
    post: FactorizedPosterior<T>,
    cfg: BbviConfig,
    rng: RngStream,
    t: usize,
}

impl<T: Real> Bbvi<T> {
    pub fn new(post: FactorizedPosterior<T>, cfg: BbviConfig, rng: &RngStream) -> Result<Self> {
        cfg.learning_rate.validate()?;
        check_samples(cfg.n_s, 2)?;
        Ok(Self { post, cfg, rng: rng.split("posterior-draws"), t: 0 })
    }

    pub fn factorized(&self) -> &FactorizedPosterior<T> {
        &self.post
    }
}

impl<T: Real> VariationalOptimizer<T> for Bbvi<T> {
    fn name(&self) -> &'static str {
        "bbvi"
    }

    fn step(&mut self, problem: &Posterior<'_, T>) -> Result<StepReport> {
        let (g, est) = bbvi_gradient(&self.post, problem, self.cfg.n_s, &mut self.rng)?;
        let beta = T::lit(self.cfg.learning_rate.at(self.t));
        linalg::axpy(beta, &g.mean, &mut self.post.mean);
        linalg::axpy(beta, &g.log_std, &mut self.post.log_std);
        self.t += 1;
        Ok(StepReport {
            elbo: Some(est.value),
            elbo_stderr: Some(est.stderr),
            draws_dropped: est.dropped,
            ..StepReport::default()
        })
    }

    fn posterior(&self) -> Result<GaussianVariational<T>> {
        self.post.to_gaussian()
    }

    fn iteration(&self) -> usize {
        self.t
    }
}

// ---- NG-BBVI ----------------------------------------------------------------

/// Per-factor output of [`ngbbvi_gradients`]. Vectors are laid out as the
/// block's means followed by its log standard deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorGradient<T> {
    pub a_star: T,
    /// Mean of the control-variated score terms over the `Y` half.
    pub euclidean: Vec<T>,
    pub fim: Matrix<T>,
    pub natural: Vec<T>,
    /// A ridge was added because the empirical Fisher matrix was singular.
    pub ridge_added: bool,
}

/// Score-function gradients per factor with an optimal scalar control variate
/// estimated on the first half of the draws and applied on the second half.
pub fn ngbbvi_gradients<T: Real>(
    post: &FactorizedPosterior<T>,
    target: &dyn LogDensity<T>,
    n_s: usize,
    control_variate: bool,
    rng: &mut RngStream,
) -> Result<(Vec<FactorGradient<T>>, ElboEstimate)> {
    check_samples(n_s, 4)?;
    check_dim(post.dim(), target.dim())?;
    let draws: Vec<Vec<T>> = (0..n_s).map(|_| post.sample(rng)).collect();
    let joint: Vec<T> = draws.iter().map(|th| target.log_density(th).unwrap_or(T::nan())).collect();
    let elbo_terms: Vec<f64> = draws.iter().zip(&joint).map(|(th, &j)| (j - post.log_pdf(th)).as_f64()).collect();
    let est = ElboEstimate::from_terms(&elbo_terms)?;
    let finite: Vec<usize> = (0..n_s).filter(|&s| elbo_terms[s].is_finite()).collect();
    if finite.len() < 4 {
        return Err(Error::NonFinite("too few finite draws for NG-BBVI".into()));
    }
    let (x_idx, y_idx) = finite.split_at(finite.len() / 2);

    let mut out = Vec::with_capacity(post.blocks().len());
    for (k, block) in post.blocks().iter().enumerate() {
        let width = 2 * block.len();
        let score = |th: &[T]| -> Vec<T> {
            let mut h = vec![T::zero(); width];
            for (j, i) in block.clone().enumerate() {
                let (sm, ss) = post.score(i, th);
                h[j] = sm;
                h[block.len() + j] = ss;
            }
            h
        };
        let weight = |s: usize| joint[s] - post.factor_log_pdf(k, &draws[s]);

        let a_star = if control_variate {
            let hs: Vec<Vec<T>> = x_idx.iter().map(|&s| score(&draws[s])).collect();
            let fs: Vec<Vec<T>> = x_idx.iter().zip(&hs).map(|(&s, h)| linalg::scale(h, weight(s))).collect();
            let nx = T::from_usize_lossy(x_idx.len());
            let (mut cov, mut var) = (T::zero(), T::zero());
            for d in 0..width {
                let mh = hs.iter().map(|h| h[d]).sum::<T>() / nx;
                let mf = fs.iter().map(|f| f[d]).sum::<T>() / nx;
                for (h, f) in hs.iter().zip(&fs) {
                    cov += (h[d] - mh) * (f[d] - mf);
                    var += (h[d] - mh) * (h[d] - mh);
                }
            }
            if var > T::zero() {
                cov / var
            } else {
                T::zero()
            }
        } else {
            T::zero()
        };

        let ny = T::from_usize_lossy(y_idx.len());
        let mut g = vec![T::zero(); width];
        let mut fim = Matrix::zeros(width, width);
        for &s in y_idx {
            let h = score(&draws[s]);
            linalg::axpy((weight(s) - a_star) / ny, &h, &mut g);
            fim.add_scaled(ny.recip(), &Matrix::outer(&h, &h));
        }
        let (chol, ridge_added) = match Cholesky::new(&fim) {
            Ok(c) => (c, false),
            Err(_) => {
                let tr = fim.trace();
                let ridge = T::lit(1e-8) * if tr > T::zero() { tr / T::from_usize_lossy(width) } else { T::one() };
                (Cholesky::new(&fim.add(&Matrix::scaled_identity(width, ridge)))?, true)
            }
        };
        let natural = chol.solve(&g);
        out.push(FactorGradient { a_star, euclidean: g, fim, natural, ridge_added });
    }
    Ok((out, est))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NgBbviConfig {
    pub beta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub n_s: usize,
    pub control_variate: bool,
}

impl Default for NgBbviConfig {
    fn default() -> Self {
        Self { beta: 0.01, beta1: 0.9, beta2: 0.999, adam_eps: 1e-8, n_s: 16, control_variate: true }
    }
}

/// NG-BBVI with Adam-style moment averaging of the natural gradients.
pub struct NgBbvi<T> {
    post: FactorizedPosterior<T>,
    cfg: NgBbviConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    rng: RngStream,
    t: usize,
}

impl<T: Real> NgBbvi<T> {
    pub fn new(post: FactorizedPosterior<T>, cfg: NgBbviConfig, rng: &RngStream) -> Result<Self> {
        check_samples(cfg.n_s, 4)?;
        for (name, v) in [("beta1", cfg.beta1), ("beta2", cfg.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(cfg.beta > 0.0) {
            return Err(Error::invalid("beta must be positive"));
        }
        let m: Vec<Vec<T>> = post.blocks().iter().map(|b| vec![T::zero(); 2 * b.len()]).collect();
        Ok(Self { v: m.clone(), m, post, cfg, rng: rng.split("posterior-draws"), t: 0 })
    }

    pub fn factorized(&self) -> &FactorizedPosterior<T> {
        &self.post
    }
}

impl<T: Real> VariationalOptimizer<T> for NgBbvi<T> {
    fn name(&self) -> &'static str {
        "ngbbvi"
    }

    fn step(&mut self, problem: &Posterior<'_, T>) -> Result<StepReport> {
        let (grads, est) = ngbbvi_gradients(&self.post, problem, self.cfg.n_s, self.cfg.control_variate, &mut self.rng)?;
        self.t += 1;
        let (b1, b2) = (T::lit(self.cfg.beta1), T::lit(self.cfg.beta2));
        let c1 = T::one() - b1.powi(self.t as i32);
        let c2 = T::one() - b2.powi(self.t as i32);
        let beta = T::lit(self.cfg.beta);
        let eps = T::lit(self.cfg.adam_eps);
        let mut safeguard = false;
        for (k, g) in grads.iter().enumerate() {
            safeguard |= g.ridge_added;
            let block = self.post.blocks()[k].clone();
            let len = block.len();
            for (j, &ng) in g.natural.iter().enumerate() {
                let m = &mut self.m[k][j];
                let v = &mut self.v[k][j];
                *m = b1 * *m + (T::one() - b1) * ng;
                *v = b2 * *v + (T::one() - b2) * ng * ng;
                let step = beta * (*m / c1) / ((*v / c2).sqrt() + eps);
                if j < len {
                    self.post.mean[block.start + j] += step;
                } else {
                    self.post.log_std[block.start + j - len] += step;
                }
            }
        }
        Ok(StepReport {
            elbo: Some(est.value),
            elbo_stderr: Some(est.stderr),
            draws_dropped: est.dropped,
            safeguard,
            ..StepReport::default()
        })
    }

    fn posterior(&self) -> Result<GaussianVariational<T>> {
        self.post.to_gaussian()
    }

    fn iteration(&self) -> usize {
        self.t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{FnDensity, GaussianPrior, LinearRegression, Task};

    #[test]
    fn std_round_trip_through_softplus() {
        let s = BbbState::<f64>::from_std(vec![0.0, 0.0], &[0.05, 3.0]).unwrap();
        let back = s.sigma();
        assert!((back[0] - 0.05).abs() < 1e-14 && (back[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn bbvi_gradient_vanishes_when_target_is_q() {
        let post = FactorizedPosterior::fully_factorized(vec![0.3, -0.2], vec![0.1, -0.4]).unwrap();
        let p2 = post.clone();
        let target = FnDensity::new(2, move |t: &[f64]| p2.log_pdf(t));
        let (g, _) = bbvi_gradient(&post, &target, 32, &mut RngStream::new(1)).unwrap();
        assert!(g.mean.iter().chain(&g.log_std).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn bbvi_drops_non_finite_draws() {
        let post = FactorizedPosterior::fully_factorized(vec![0.0], vec![0.0]).unwrap();
        let target = FnDensity::new(1, |t: &[f64]| if t[0] > 0.0 { -t[0] * t[0] } else { f64::NAN });
        let (g, est) = bbvi_gradient(&post, &target, 64, &mut RngStream::new(2)).unwrap();
        assert!(est.dropped > 10 && est.dropped < 54);
        assert!(g.mean[0].is_finite());
    }

    #[test]
    fn factor_blocks_must_partition() {
        assert!(FactorizedPosterior::new(vec![0.0; 3], vec![0.0; 3], vec![0..1, 2..3]).is_err());
        assert!(FactorizedPosterior::new(vec![0.0; 3], vec![0.0; 3], vec![0..2]).is_err());
        assert!(FactorizedPosterior::new(vec![0.0; 3], vec![0.0; 3], vec![0..2, 2..3]).is_ok());
    }

    #[test]
    fn empty_batch_bbb_gradient_at_prior_has_zero_mean() {
        let prior = GaussianPrior::<f64>::with_mean(vec![0.5, -1.0], 4.0).unwrap();
        let model = LinearRegression::new(2, 1.0).unwrap();
        let data = Dataset::empty(2, 1, Task::Regression);
        let problem = Posterior::new(&model, &prior, &data).unwrap();
        let state = BbbState::from_std(vec![0.5, -1.0], &[0.5, 0.5]).unwrap();
        let mut rng = RngStream::new(3);
        let n = 1000;
        let mut acc = vec![0.0; 4];
        let mut sq = [0.0; 4];
        for _ in 0..n {
            let eps = rng.normal_vec::<f64>(2);
            let g = bbb_gradient(&state, &eps, &problem, &data, 0.0).unwrap();
            let v = [g.grad_mu[0], g.grad_mu[1], g.grad_rho[0], g.grad_rho[1]];
            for i in 0..4 {
                acc[i] += v[i] / n as f64;
                sq[i] += v[i] * v[i] / n as f64;
            }
        }
        let stderr: f64 = (0..4).map(|i| (sq[i] - acc[i] * acc[i]) / n as f64).sum::<f64>().sqrt();
        assert!(linalg::norm2(&acc) < 4.0 * stderr.max(1e-12), "{acc:?} vs {stderr}");
    }

    #[test]
    fn ngbbvi_needs_four_draws() {
        let post = FactorizedPosterior::fully_factorized(vec![0.0], vec![0.0]).unwrap();
        let target = FnDensity::new(1, |t: &[f64]| -t[0] * t[0]);
        assert!(ngbbvi_gradients(&post, &target, 3, true, &mut RngStream::new(1)).is_err());
    }
}
