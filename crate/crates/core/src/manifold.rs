//! Riemannian tools on the manifold of symmetric positive-definite matrices
//! and the MGVB / EMGVB optimizers that use them.

use serde::{Deserialize, Serialize};

use crate::diagnostics::ElboEstimate;
use crate::error::{check_dim, Error, Result};
use crate::gaussian::GaussianVariational;
use crate::linalg::{self, spd_inv_sqrt, spd_sqrt, sym_spectral_norm, Cholesky, Matrix};
use crate::models::Posterior;
use crate::optim::{check_samples, StepReport, VariationalOptimizer, MAX_HALVINGS};
use crate::rng::RngStream;
use crate::scalar::Real;

/// A point on the SPD manifold, certified by its Cholesky factor.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdPoint<T> {
    value: Matrix<T>,
    chol: Cholesky<T>,
}

impl<T: Real> SpdPoint<T> {
    pub fn new(value: Matrix<T>) -> Result<Self> {
        let value = value.symmetrize();
        let chol = Cholesky::new(&value).map_err(|_| Error::ManifoldExit("matrix is not positive definite".into()))?;
        Ok(Self { value, chol })
    }

    pub fn value(&self) -> &Matrix<T> {
        &self.value
    }

    pub fn cholesky(&self) -> &Cholesky<T> {
        &self.chol
    }

    pub fn inverse(&self) -> Matrix<T> {
        self.chol.inverse().symmetrize()
    }

    pub fn dim(&self) -> usize {
        self.value.rows()
    }
}

/// A symmetric matrix in the tangent space of some [`SpdPoint`].
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector<T>(Matrix<T>);

impl<T: Real> TangentVector<T> {
    /// Symmetrizes `value`.
    pub fn new(value: &Matrix<T>) -> Result<Self> {
        if !value.is_square() {
            return Err(Error::dim(value.rows(), value.cols()));
        }
        Ok(Self(value.symmetrize()))
    }

    pub fn zeros(k: usize) -> Self {
        Self(Matrix::zeros(k, k))
    }

    pub fn value(&self) -> &Matrix<T> {
        &self.0
    }

    pub fn scale(&self, s: T) -> Self {
        Self(self.0.scale(s))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }
}

/// `R_ζ(ξ) = ζ + ξ + ½ ξ ζ⁻¹ ξ`
pub fn retract<T: Real>(base: &SpdPoint<T>, xi: &TangentVector<T>) -> Result<SpdPoint<T>> {
    check_dim(base.dim(), xi.dim())?;
    let x = xi.value();
    let zx = base.chol.solve_matrix(x);
    let next = base.value.add(x).add(&x.matmul(&zx).scale(T::half()));
    if !next.is_finite() {
        return Err(Error::ManifoldExit("retraction produced non-finite entries".into()));
    }
    SpdPoint::new(next)
}

/// `E = (η ζ⁻¹)^{1/2}` computed as `ζ^{1/2} (ζ^{-1/2} η ζ^{-1/2})^{1/2} ζ^{-1/2}`.
pub fn transport_factor<T: Real>(from: &SpdPoint<T>, to: &SpdPoint<T>) -> Result<Matrix<T>> {
    check_dim(from.dim(), to.dim())?;
    let half = spd_sqrt(&from.value)?;
    let inv_half = spd_inv_sqrt(&from.value)?;
    let s = inv_half.matmul(&to.value).matmul(&inv_half).symmetrize();
    Ok(half.matmul(&spd_sqrt(&s)?).matmul(&inv_half))
}

/// Vector transport `ξ ↦ E ξ Eᵀ` from `T_from` to `T_to`.
pub fn transport<T: Real>(from: &SpdPoint<T>, to: &SpdPoint<T>, xi: &TangentVector<T>) -> Result<TangentVector<T>> {
    check_dim(from.dim(), xi.dim())?;
    if from == to {
        return Ok(xi.clone());
    }
    let e = transport_factor(from, to)?;
    TangentVector::new(&e.matmul(xi.value()).matmul(&e.transpose()))
}

fn clip_spectral<T: Real>(g: Matrix<T>, limit: f64) -> Result<(Matrix<T>, bool)> {
    let norm = sym_spectral_norm(&g)?;
    let limit = T::lit(limit);
    if norm > limit {
        Ok((g.scale(limit / norm), true))
    } else {
        Ok((g, false))
    }
}

/// Score-function gradient estimates and the ELBO from the same draws.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldGradients<T> {
    pub mu: Vec<T>,
    pub matrix: MatrixGradient<T>,
    pub elbo: ElboEstimate,
}

#[derive(Clone, Debug, PartialEq)]
pub enum MatrixGradient<T> {
    Full(Matrix<T>),
    Diagonal(Vec<T>),
}

struct Draw<T> {
    d: Vec<T>,
    ll: T,
    h: T,
}

fn simulate<T: Real>(q: &GaussianVariational<T>, problem: &Posterior<'_, T>, n_s: usize, rng: &mut RngStream) -> Result<(Vec<Draw<T>>, ElboEstimate)> {
    let mut draws = Vec::with_capacity(n_s);
    let mut terms = Vec::with_capacity(n_s);
    for _ in 0..n_s {
        let th = q.sample_one(rng);
        let ll = problem.model.log_lik(&th, problem.data)?;
        let h = ll + problem.prior.log_density(&th)? - q.log_pdf(&th)?;
        terms.push(h.as_f64());
        if h.is_finite() {
            draws.push(Draw { d: linalg::sub(&th, q.mean()), ll, h });
        }
    }
    if draws.is_empty() {
        return Err(Error::NonFinite("h-function at every draw".into()));
    }
    Ok((draws, ElboEstimate::from_terms(&terms)?))
}

fn h_at_mean<T: Real>(q: &GaussianVariational<T>, problem: &Posterior<'_, T>) -> Result<T> {
    let mu = q.mean();
    Ok(problem.model.log_lik(mu, problem.data)? + problem.prior.log_density(mu)? - q.log_pdf(mu)?)
}

/// MGVB natural gradients `ĝ_μ = mean (θ−μ)(h − c)`,
/// `ĝ_Σ = mean −½(Σ − (θ−μ)(θ−μ)ᵀ)(h − c)` with `c = h(μ)` when `baseline`.
pub fn mgvb_gradients<T: Real>(
    mu: &[T],
    sigma: &SpdPoint<T>,
    problem: &Posterior<'_, T>,
    n_s: usize,
    baseline: bool,
    rng: &mut RngStream,
) -> Result<ManifoldGradients<T>> {
    check_samples(n_s, 2)?;
    let q = GaussianVariational::from_cov_cholesky(mu.to_vec(), sigma.chol.clone())?;
    let c = if baseline { h_at_mean(&q, problem)? } else { T::zero() };
    let (draws, elbo) = simulate(&q, problem, n_s, rng)?;
    let k = mu.len();
    let inv = T::from_usize_lossy(draws.len()).recip();
    let mut g_mu = vec![T::zero(); k];
    let mut g_s = Matrix::zeros(k, k);
    for dr in &draws {
        let w = (dr.h - c) * inv;
        linalg::axpy(w, &dr.d, &mut g_mu);
        g_s.add_scaled(-T::half() * w, &sigma.value.sub(&Matrix::outer(&dr.d, &dr.d)));
    }
    Ok(ManifoldGradients { mu: g_mu, matrix: MatrixGradient::Full(g_s.symmetrize()), elbo })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MgvbConfig {
    pub beta: f64,
    pub omega: f64,
    pub n_s: usize,
    /// Subtract `h(μ)` from the h-function; unbiased since scores have zero mean.
    pub baseline: bool,
    /// Use `2Σ∇_Σ𝓛Σ`, the exact Gaussian natural gradient, instead of `Σ∇_Σ𝓛Σ`.
    pub exact_factor: bool,
    pub clip: f64,
}

impl Default for MgvbConfig {
    fn default() -> Self {
        Self { beta: 0.01, omega: 0.9, n_s: 64, baseline: true, exact_factor: false, clip: 100.0 }
    }
}

fn validate_common(beta: f64, omega: f64, n_s: usize, clip: f64) -> Result<()> {
    if !(beta > 0.0) {
        return Err(Error::invalid("beta must be positive"));
    }
    if !(0.0..1.0).contains(&omega) {
        return Err(Error::invalid("omega must lie in [0, 1)"));
    }
    if !(clip > 0.0) {
        return Err(Error::invalid("clip must be positive"));
    }
    check_samples(n_s, 2)
}

struct Momentum<T> {
    mu: Vec<T>,
    matrix: MatrixGradient<T>,
}

/// Manifold Gaussian variational Bayes over `(μ, Σ)`.
pub struct Mgvb<T> {
    mu: Vec<T>,
    sigma: SpdPoint<T>,
    momentum: Option<Momentum<T>>,
    cfg: MgvbConfig,
    rng: RngStream,
    t: usize,
}

impl<T: Real> Mgvb<T> {
    pub fn new(q: &GaussianVariational<T>, cfg: MgvbConfig, rng: &RngStream) -> Result<Self> {
        validate_common(cfg.beta, cfg.omega, cfg.n_s, cfg.clip)?;
        Ok(Self { mu: q.mean().to_vec(), sigma: SpdPoint::new(q.covariance())?, momentum: None, cfg, rng: rng.split("posterior-draws"), t: 0 })
    }

    pub fn sigma(&self) -> &SpdPoint<T> {
        &self.sigma
    }

    fn gradients(&mut self, problem: &Posterior<'_, T>) -> Result<(Vec<T>, Matrix<T>, ElboEstimate, bool)> {
        let g = mgvb_gradients(&self.mu, &self.sigma, problem, self.cfg.n_s, self.cfg.baseline, &mut self.rng)?;
        let MatrixGradient::Full(mut gs) = g.matrix else { unreachable!() };
        if self.cfg.exact_factor {
            gs = gs.scale(T::two());
        }
        let (gs, clipped) = clip_spectral(gs, self.cfg.clip)?;
        Ok((g.mu, gs, g.elbo, clipped))
    }
}

impl<T: Real> VariationalOptimizer<T> for Mgvb<T> {
    fn name(&self) -> &'static str {
        "mgvb"
    }

    fn step(&mut self, problem: &Posterior<'_, T>) -> Result<StepReport> {
        let mut safeguard = false;
        if self.momentum.is_none() {
            let (g_mu, g_s, _, clipped) = self.gradients(problem)?;
            safeguard |= clipped;
            self.momentum = Some(Momentum { mu: g_mu, matrix: MatrixGradient::Full(g_s) });
        }
        let mom = self.momentum.take().expect("initialized above");
        let MatrixGradient::Full(m_s) = &mom.matrix else { unreachable!() };
        let m_s = TangentVector::new(m_s)?;
        let (next, b, halvings) = retract_halving(&self.sigma, &m_s, T::lit(self.cfg.beta))?;
        linalg::axpy(b, &mom.mu, &mut self.mu);
        let old = std::mem::replace(&mut self.sigma, next);
        self.t += 1;

        let (g_mu, g_s, elbo, clipped) = self.gradients(problem)?;
        safeguard |= clipped;
        let omega = T::lit(self.cfg.omega);
        let mut m_mu = linalg::scale(&mom.mu, omega);
        linalg::axpy(T::one() - omega, &g_mu, &mut m_mu);
        let mut m_new = transport(&old, &self.sigma, &m_s)?.value().scale(omega);
        m_new.add_scaled(T::one() - omega, &g_s);
        self.momentum = Some(Momentum { mu: m_mu, matrix: MatrixGradient::Full(m_new.symmetrize()) });
        Ok(StepReport {
            elbo: Some(elbo.value),
            elbo_stderr: Some(elbo.stderr).filter(|s| s.is_finite()),
            draws_dropped: elbo.dropped,
            step_halvings: halvings,
            safeguard,
            ..StepReport::default()
        })
    }

    fn posterior(&self) -> Result<GaussianVariational<T>> {
        GaussianVariational::from_cov_cholesky(self.mu.clone(), self.sigma.chol.clone())
    }

    fn iteration(&self) -> usize {
        self.t
    }
}

/// Retracts along `β·ξ`, halving `β` on manifold exit. Returns the new point,
/// the step size used and the number of halvings.
fn retract_halving<T: Real>(base: &SpdPoint<T>, xi: &TangentVector<T>, beta: T) -> Result<(SpdPoint<T>, T, u32)> {
    let mut b = beta;
    for halvings in 0..=MAX_HALVINGS {
        match retract(base, &xi.scale(b)) {
            Ok(p) => return Ok((p, b, halvings)),
            Err(Error::ManifoldExit(_)) => b *= T::half(),
            Err(e) => return Err(e),
        }
    }
    Err(Error::ManifoldExit("retraction failed after repeated step halving".into()))
}

/// Which constants and `log f` EMGVB uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmgvbBranch {
    /// Closed-form prior terms, `log f = log p(D|θ)`.
    #[default]
    GaussianPrior,
    /// No constants, `log f = h(θ)`.
    HFunction,
}

/// Precision of the EMGVB posterior.
#[derive(Clone, Debug, PartialEq)]
pub enum EmgvbPrecision<T> {
    Full(SpdPoint<T>),
    Diagonal(Vec<T>),
}

impl<T: Real> EmgvbPrecision<T> {
    fn to_gaussian(&self, mu: &[T]) -> Result<GaussianVariational<T>> {
        match self {
            EmgvbPrecision::Full(p) => GaussianVariational::from_precision_cholesky(mu.to_vec(), p.chol.clone()),
            EmgvbPrecision::Diagonal(p) => GaussianVariational::diagonal(mu.to_vec(), p.iter().map(|x| x.recip()).collect()),
        }
    }
}

/// Exact natural-gradient estimates `(∇̃_μ𝓛, ∇̃_{Σ⁻¹}𝓛)` for EMGVB.
pub fn emgvb_gradients<T: Real>(
    mu: &[T],
    precision: &EmgvbPrecision<T>,
    problem: &Posterior<'_, T>,
    n_s: usize,
    branch: EmgvbBranch,
    baseline: bool,
    rng: &mut RngStream,
) -> Result<ManifoldGradients<T>> {
    check_samples(n_s, 2)?;
    let q = precision.to_gaussian(mu)?;
    let k = mu.len();
    let c = match (baseline, branch) {
        (false, _) => T::zero(),
        (true, EmgvbBranch::GaussianPrior) => problem.model.log_lik(mu, problem.data)?,
        (true, EmgvbBranch::HFunction) => h_at_mean(&q, problem)?,
    };
    let (draws, elbo) = simulate(&q, problem, n_s, rng)?;
    let inv = T::from_usize_lossy(draws.len()).recip();
    let log_f = |d: &Draw<T>| match branch {
        EmgvbBranch::GaussianPrior => d.ll,
        EmgvbBranch::HFunction => d.h,
    };
    let mut g_mu = vec![T::zero(); k];
    for dr in &draws {
        linalg::axpy((log_f(dr) - c) * inv, &dr.d, &mut g_mu);
    }
    let p0 = problem.prior.precision_matrix();
    if branch == EmgvbBranch::GaussianPrior {
        // c_μ = −Σ Σ₀⁻¹ (μ − μ₀)
        let pull = problem.prior.precision_times(&linalg::sub(mu, problem.prior.mean()));
        linalg::axpy(-T::one(), &q.covariance_times(&pull), &mut g_mu);
    }
    let matrix = match precision {
        EmgvbPrecision::Full(p) => {
            let mut g = match branch {
                EmgvbBranch::GaussianPrior => p0.sub(&p.value),
                EmgvbBranch::HFunction => Matrix::zeros(k, k),
            };
            for dr in &draws {
                let v = p.value.matvec(&dr.d);
                g.add_scaled((log_f(dr) - c) * inv, &p.value.sub(&Matrix::outer(&v, &v)));
            }
            MatrixGradient::Full(g.symmetrize())
        }
        EmgvbPrecision::Diagonal(p) => {
            let mut g: Vec<T> = match branch {
                EmgvbBranch::GaussianPrior => (0..k).map(|i| p0[(i, i)] - p[i]).collect(),
                EmgvbBranch::HFunction => vec![T::zero(); k],
            };
            for dr in &draws {
                let w = (log_f(dr) - c) * inv;
                for i in 0..k {
                    let v = p[i] * dr.d[i];
                    g[i] += w * (p[i] - v * v);
                }
            }
            MatrixGradient::Diagonal(g)
        }
    };
    Ok(ManifoldGradients { mu: g_mu, matrix, elbo })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmgvbConfig {
    pub beta: f64,
    pub omega: f64,
    pub n_s: usize,
    pub branch: EmgvbBranch,
    pub baseline: bool,
    pub diagonal: bool,
    pub clip: f64,
}

impl Default for EmgvbConfig {
    fn default() -> Self {
        Self { beta: 0.01, omega: 0.9, n_s: 64, branch: EmgvbBranch::GaussianPrior, baseline: true, diagonal: false, clip: 100.0 }
    }
}

/// Exact manifold Gaussian variational Bayes over `(μ, Σ⁻¹)`.
pub struct Emgvb<T> {
    mu: Vec<T>,
    precision: EmgvbPrecision<T>,
    momentum: Option<Momentum<T>>,
    cfg: EmgvbConfig,
    rng: RngStream,
    t: usize,
}

impl<T: Real> Emgvb<T> {
    pub fn new(q: &GaussianVariational<T>, cfg: EmgvbConfig, rng: &RngStream) -> Result<Self> {
        validate_common(cfg.beta, cfg.omega, cfg.n_s, cfg.clip)?;
        let precision = if cfg.diagonal {
            EmgvbPrecision::Diagonal(q.variances().iter().map(|v| v.recip()).collect())
        } else {
            EmgvbPrecision::Full(SpdPoint::new(q.precision())?)
        };
        Ok(Self { mu: q.mean().to_vec(), precision, momentum: None, cfg, rng: rng.split("posterior-draws"), t: 0 })
    }

    pub fn precision(&self) -> &EmgvbPrecision<T> {
        &self.precision
    }

    fn gradients(&mut self, problem: &Posterior<'_, T>) -> Result<(ManifoldGradients<T>, bool)> {
        let mut g = emgvb_gradients(&self.mu, &self.precision, problem, self.cfg.n_s, self.cfg.branch, self.cfg.baseline, &mut self.rng)?;
        let mut clipped = false;
        g.matrix = match g.matrix {
            MatrixGradient::Full(m) => {
                let (m, c) = clip_spectral(m, self.cfg.clip)?;
                clipped = c;
                MatrixGradient::Full(m)
            }
            MatrixGradient::Diagonal(v) => {
                let limit = T::lit(self.cfg.clip);
                let norm = v.iter().fold(T::zero(), |a, x| a.max(x.abs()));
                if norm > limit {
                    clipped = true;
                    MatrixGradient::Diagonal(linalg::scale(&v, limit / norm))
                } else {
                    MatrixGradient::Diagonal(v)
                }
            }
        };
        Ok((g, clipped))
    }
}

/// Elementwise retraction `p + ξ + ½ξ²/p`, halving `β` if any entry leaves `(0, ∞)`.
fn retract_diag_halving<T: Real>(p: &[T], xi: &[T], beta: T) -> Result<(Vec<T>, T, u32)> {
    let mut b = beta;
    for halvings in 0..=MAX_HALVINGS {
        let next: Vec<T> = p.iter().zip(xi).map(|(&p, &x)| {
            let s = b * x;
            p + s + T::half() * s * s / p
        }).collect();
        if next.iter().all(|v| *v > T::zero() && v.is_finite()) {
            return Ok((next, b, halvings));
        }
        b *= T::half();
    }
    Err(Error::ManifoldExit("diagonal retraction failed after repeated step halving".into()))
}

impl<T: Real> VariationalOptimizer<T> for Emgvb<T> {
    fn name(&self) -> &'static str {
        "emgvb"
    }

    fn step(&mut self, problem: &Posterior<'_, T>) -> Result<StepReport> {
        let mut safeguard = false;
        if self.momentum.is_none() {
            let (g, clipped) = self.gradients(problem)?;
            safeguard |= clipped;
            self.momentum = Some(Momentum { mu: g.mu, matrix: g.matrix });
        }
        let mom = self.momentum.take().expect("initialized above");
        let beta = T::lit(self.cfg.beta);
        let omega = T::lit(self.cfg.omega);
        let (next, b, halvings, transported) = match (&self.precision, &mom.matrix) {
            (EmgvbPrecision::Full(p), MatrixGradient::Full(m)) => {
                let m = TangentVector::new(m)?;
                let (next, b, h) = retract_halving(p, &m, beta)?;
                let moved = transport(p, &next, &m)?.value().clone();
                (EmgvbPrecision::Full(next), b, h, MatrixGradient::Full(moved))
            }
            (EmgvbPrecision::Diagonal(p), MatrixGradient::Diagonal(m)) => {
                let (next, b, h) = retract_diag_halving(p, m, beta)?;
                // E = (η/ζ)^{1/2} elementwise, so E ξ E = ξ η/ζ
                let moved = (0..p.len()).map(|i| m[i] * next[i] / p[i]).collect();
                (EmgvbPrecision::Diagonal(next), b, h, MatrixGradient::Diagonal(moved))
            }
            _ => unreachable!("momentum shares the precision representation"),
        };
        linalg::axpy(b, &mom.mu, &mut self.mu);
        self.precision = next;
        self.t += 1;

        let (g, clipped) = self.gradients(problem)?;
        safeguard |= clipped;
        let mut m_mu = linalg::scale(&mom.mu, omega);
        linalg::axpy(T::one() - omega, &g.mu, &mut m_mu);
        let matrix = match (transported, &g.matrix) {
            (MatrixGradient::Full(t), MatrixGradient::Full(gm)) => {
                let mut m = t.scale(omega);
                m.add_scaled(T::one() - omega, gm);
                MatrixGradient::Full(m.symmetrize())
            }
            (MatrixGradient::Diagonal(t), MatrixGradient::Diagonal(gm)) => {
                MatrixGradient::Diagonal(t.iter().zip(gm).map(|(&t, &g)| omega * t + (T::one() - omega) * g).collect())
            }
            _ => unreachable!(),
        };
        self.momentum = Some(Momentum { mu: m_mu, matrix });
        Ok(StepReport {
            elbo: Some(g.elbo.value),
            elbo_stderr: Some(g.elbo.stderr).filter(|s| s.is_finite()),
            draws_dropped: g.elbo.dropped,
            step_halvings: halvings,
            safeguard,
            ..StepReport::default()
        })
    }

    fn posterior(&self) -> Result<GaussianVariational<T>> {
        self.precision.to_gaussian(&self.mu)
    }

    fn iteration(&self) -> usize {
        self.t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(v: f64) -> SpdPoint<f64> {
        SpdPoint::new(Matrix::from_rows(&[vec![v]])).unwrap()
    }

    #[test]
    fn zero_step_is_identity() {
        let z = SpdPoint::new(Matrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]])).unwrap();
        let r = retract(&z, &TangentVector::zeros(2)).unwrap();
        assert_eq!(r.value(), z.value());
    }

    #[test]
    fn scalar_retraction_and_transport() {
        let r = retract(&spd(1.0), &TangentVector::new(&Matrix::from_rows(&[vec![0.2]])).unwrap()).unwrap();
        assert!((r.value()[(0, 0)] - 1.22).abs() < 1e-15);
        let t = transport(&spd(1.0), &spd(4.0), &TangentVector::new(&Matrix::from_rows(&[vec![0.3]])).unwrap()).unwrap();
        assert!((t.value()[(0, 0)] - 1.2).abs() < 1e-12);
    }

    #[test]
    fn non_spd_start_is_a_manifold_exit() {
        let err = SpdPoint::new(Matrix::from_rows(&[vec![-1.0]])).unwrap_err();
        assert!(matches!(err, Error::ManifoldExit(_)));
    }

    #[test]
    fn diagonal_retraction_stays_positive() {
        let (p, _, h) = retract_diag_halving(&[1.0, 0.5], &[-10.0, 3.0], 1.0).unwrap();
        assert_eq!(h, 0);
        assert!(p.iter().all(|v| *v > 0.0));
    }
}
