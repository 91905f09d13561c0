//! Metropolis–Hastings and Hamiltonian Monte Carlo samplers with chain
//! diagnostics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, Cholesky, Matrix};
use crate::models::{GradLogDensity, LogDensity};
use crate::rng::RngStream;
use crate::scalar::Real;

/// Minimum number of post-burn-in draws for [`effective_sample_size`].
pub const MIN_ESS_DRAWS: usize = 100;

/// Sequence of draws with accept/reject bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct Chain<T> {
    draws: Matrix<T>,
    accepted: Vec<bool>,
    log_target: Vec<T>,
    burn_in: usize,
}

impl<T: Real> Chain<T> {
    pub fn draws(&self) -> &Matrix<T> {
        &self.draws
    }

    pub fn accepted(&self) -> &[bool] {
        &self.accepted
    }

    /// Unnormalized log-target at each recorded draw.
    pub fn log_target(&self) -> &[T] {
        &self.log_target
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    pub fn len(&self) -> usize {
        self.draws.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.draws.cols()
    }

    /// Fraction of accepted proposals over the whole chain.
    pub fn accept_rate(&self) -> f64 {
        if self.accepted.is_empty() {
            return 0.0;
        }
        self.accepted.iter().filter(|&&a| a).count() as f64 / self.accepted.len() as f64
    }

    /// Draws `B..T`.
    pub fn post_burn_in(&self) -> Matrix<T> {
        let k = self.dim();
        let rows = self.len() - self.burn_in;
        Matrix::from_vec(rows, k, self.draws.as_slice()[self.burn_in * k..].to_vec()).expect("consistent shape")
    }

    pub fn mean(&self) -> Vec<f64> {
        column_stats(&self.post_burn_in()).0
    }

    /// Sample covariance of the post-burn-in draws.
    pub fn covariance(&self) -> Matrix<f64> {
        column_stats(&self.post_burn_in()).1
    }

    /// Writes one draw per line after a commented config echo and a column header.
    pub fn write_text<W: Write>(&self, mut w: W, config_echo: &str) -> Result<()> {
        for line in config_echo.lines() {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "# burn_in = {}", self.burn_in)?;
        writeln!(w, "# accept_rate = {}", self.accept_rate())?;
        let header: Vec<String> = (0..self.dim()).map(|j| format!("theta{j}")).collect();
        writeln!(w, "{}", header.join(" "))?;
        for r in 0..self.len() {
            let row: Vec<String> = self.draws.row(r).iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    }

    /// Parses the format produced by [`Chain::write_text`]. Accept flags are not
    /// stored in the file, so the returned chain reports none.
    pub fn read_text(text: &str) -> Result<Self> {
        let mut burn_in = 0;
        let mut rows = Vec::new();
        let mut header_seen = false;
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("burn_in = ") {
                    burn_in = v.trim().parse().map_err(|_| Error::Data("bad burn_in line".into()))?;
                }
                continue;
            }
            if !header_seen {
                header_seen = true;
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
            rows.push(row.map_err(|_| Error::Data(format!("bad chain line {line:?}")))?.into_iter().map(T::lit).collect());
        }
        if rows.is_empty() {
            return Err(Error::Data("chain file has no draws".into()));
        }
        let draws = Matrix::from_rows(&rows);
        let n = draws.rows();
        Ok(Self { draws, accepted: Vec::new(), log_target: Vec::new(), burn_in: burn_in.min(n - 1) })
    }
}

fn column_stats<T: Real>(m: &Matrix<T>) -> (Vec<f64>, Matrix<f64>) {
    let m: Matrix<f64> = m.cast();
    let mean = linalg::column_means(&m);
    let k = m.cols();
    let n = m.rows();
    let mut cov = Matrix::zeros(k, k);
    for r in 0..n {
        let d = linalg::sub(m.row(r), &mean);
        cov.add_scaled(1.0, &Matrix::outer(&d, &d));
    }
    (mean, cov.scale(1.0 / (n.max(2) - 1) as f64))
}

fn check_run(n: usize, burn: usize) -> Result<()> {
    if n <= burn {
        return Err(Error::invalid(format!("n ({n}) must exceed burn-in ({burn})")));
    }
    Ok(())
}

/// Proposal kernel `g(θ* | θ)` for Metropolis–Hastings.
pub trait Proposal<T: Real> {
    fn propose(&self, current: &[T], rng: &mut RngStream) -> Vec<T>;

    /// `log g(to | from)`, up to a constant shared by all pairs.
    fn log_density(&self, to: &[T], from: &[T]) -> T;
}

/// Independent Gaussian increments with per-coordinate standard deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianRandomWalk<T> {
    std: Vec<T>,
}

impl<T: Real> GaussianRandomWalk<T> {
    pub fn new(std: Vec<T>) -> Result<Self> {
        if std.iter().any(|s| !(*s > T::zero()) || !s.is_finite()) {
            return Err(Error::invalid("proposal standard deviations must be positive"));
        }
        Ok(Self { std })
    }
}

impl<T: Real> Proposal<T> for GaussianRandomWalk<T> {
    fn propose(&self, current: &[T], rng: &mut RngStream) -> Vec<T> {
        current.iter().zip(&self.std).map(|(&c, &s)| c + s * T::lit(rng.standard_normal())).collect()
    }

    fn log_density(&self, to: &[T], from: &[T]) -> T {
        -T::half() * to.iter().zip(from).zip(&self.std).map(|((&a, &b), &s)| ((a - b) / s).powi(2)).sum::<T>()
    }
}

/// Metropolis–Hastings with a Gaussian random-walk proposal.
pub fn mh_sample<T: Real, D: LogDensity<T> + ?Sized>(
    target: &D,
    proposal_std: &[T],
    init: &[T],
    n: usize,
    burn: usize,
    rng: &mut RngStream,
) -> Result<Chain<T>> {
    check_dim(target.dim(), proposal_std.len())?;
    let proposal = GaussianRandomWalk::new(proposal_std.to_vec())?;
    mh_sample_with(target, &proposal, init, n, burn, rng)
}

/// Metropolis–Hastings with an arbitrary proposal and the full Hastings ratio.
pub fn mh_sample_with<T: Real, D: LogDensity<T> + ?Sized, P: Proposal<T> + ?Sized>(
    target: &D,
    proposal: &P,
    init: &[T],
    n: usize,
    burn: usize,
    rng: &mut RngStream,
) -> Result<Chain<T>> {
    check_run(n, burn)?;
    check_dim(target.dim(), init.len())?;
    let mut current = init.to_vec();
    let mut current_lp = target.log_density(&current)?;
    if !current_lp.is_finite() {
        return Err(Error::NonFinite("log-target at the initial point".into()));
    }
    let k = init.len();
    let mut draws = Matrix::zeros(n, k);
    let mut accepted = Vec::with_capacity(n);
    let mut log_target = Vec::with_capacity(n);
    for t in 0..n {
        let cand = proposal.propose(&current, rng);
        let u = rng.uniform();
        let cand_lp = target.log_density(&cand).unwrap_or(T::nan());
        let log_r = cand_lp + proposal.log_density(&current, &cand) - current_lp - proposal.log_density(&cand, &current);
        let accept = cand_lp.is_finite() && u.ln() < log_r.as_f64();
        if accept {
            current = cand;
            current_lp = cand_lp;
        }
        accepted.push(accept);
        log_target.push(current_lp);
        draws.row_mut(t).copy_from_slice(&current);
    }
    Ok(Chain { draws, accepted, log_target, burn_in: burn })
}

/// HMC mass matrix `M`; momenta are drawn from `N(0, M)`.
#[derive(Clone, Debug, PartialEq)]
pub enum MassMatrix<T> {
    Identity,
    Diagonal(Vec<T>),
    Dense(Cholesky<T>),
}

impl<T: Real> MassMatrix<T> {
    fn validate(&self, k: usize) -> Result<()> {
        match self {
            MassMatrix::Identity => Ok(()),
            MassMatrix::Diagonal(d) => {
                check_dim(k, d.len())?;
                if d.iter().any(|v| !(*v > T::zero())) {
                    return Err(Error::invalid("diagonal mass entries must be positive"));
                }
                Ok(())
            }
            MassMatrix::Dense(c) => check_dim(k, c.dim()),
        }
    }

    fn sample_momentum(&self, k: usize, rng: &mut RngStream) -> Vec<T> {
        let eps: Vec<T> = rng.normal_vec(k);
        match self {
            MassMatrix::Identity => eps,
            MassMatrix::Diagonal(d) => eps.iter().zip(d).map(|(&e, &m)| e * m.sqrt()).collect(),
            MassMatrix::Dense(c) => c.mul_lower(&eps),
        }
    }

    /// `M⁻¹ ρ`
    pub fn inverse_times(&self, rho: &[T]) -> Vec<T> {
        match self {
            MassMatrix::Identity => rho.to_vec(),
            MassMatrix::Diagonal(d) => rho.iter().zip(d).map(|(&r, &m)| r / m).collect(),
            MassMatrix::Dense(c) => c.solve(rho),
        }
    }

    /// `½ ρᵀ M⁻¹ ρ`
    pub fn kinetic(&self, rho: &[T]) -> T {
        T::half() * linalg::dot(rho, &self.inverse_times(rho))
    }
}

/// Step size, trajectory length and mass matrix for HMC.
#[derive(Clone, Debug, PartialEq)]
pub struct HmcConfig<T> {
    pub step_size: T,
    pub leapfrog_steps: usize,
    pub mass: MassMatrix<T>,
    /// Replace the mass matrix with `diag(1/var)` of the second half of the
    /// burn-in draws once burn-in ends.
    pub adapt_mass: bool,
}

impl<T: Real> HmcConfig<T> {
    pub fn new(step_size: T, leapfrog_steps: usize) -> Result<Self> {
        let cfg = Self { step_size, leapfrog_steps, mass: MassMatrix::Identity, adapt_mass: false };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > T::zero()) || !self.step_size.is_finite() {
            return Err(Error::invalid("HMC step size must be positive"));
        }
        if self.leapfrog_steps == 0 {
            return Err(Error::invalid("HMC needs at least one leapfrog step"));
        }
        Ok(())
    }
}

/// Potential `V(θ) = −log target(θ)` and its gradient.
fn potential<T: Real, D: GradLogDensity<T> + ?Sized>(target: &D, theta: &[T]) -> (T, Vec<T>) {
    match target.log_density_and_grad(theta) {
        Ok((lp, g)) => (-lp, linalg::scale(&g, -T::one())),
        Err(_) => (T::nan(), vec![T::nan(); theta.len()]),
    }
}

/// Result of one leapfrog trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub theta: Vec<T>,
    pub rho: Vec<T>,
    pub potential: T,
    pub grad_potential: Vec<T>,
}

/// `L` leapfrog steps: half-step momentum updates around full-step parameter
/// updates `θ ← θ + ε M⁻¹ ρ`.
pub fn leapfrog<T: Real, D: GradLogDensity<T> + ?Sized>(
    target: &D,
    theta: &[T],
    rho: &[T],
    grad_potential: &[T],
    cfg: &HmcConfig<T>,
) -> Trajectory<T> {
    let eps = cfg.step_size;
    let mut th = theta.to_vec();
    let mut r = rho.to_vec();
    let mut g = grad_potential.to_vec();
    let mut v = T::nan();
    for _ in 0..cfg.leapfrog_steps {
        linalg::axpy(-T::half() * eps, &g, &mut r);
        linalg::axpy(eps, &cfg.mass.inverse_times(&r), &mut th);
        (v, g) = potential(target, &th);
        linalg::axpy(-T::half() * eps, &g, &mut r);
        if !v.is_finite() {
            break;
        }
    }
    Trajectory { theta: th, rho: r, potential: v, grad_potential: g }
}

/// `H(θ, ρ) = V(θ) + ½ ρᵀ M⁻¹ ρ`
pub fn hamiltonian<T: Real, D: GradLogDensity<T> + ?Sized>(target: &D, theta: &[T], rho: &[T], mass: &MassMatrix<T>) -> T {
    potential(target, theta).0 + mass.kinetic(rho)
}

/// Hamiltonian Monte Carlo over a differentiable unnormalized log-density
/// (typically a [`crate::models::Posterior`]).
pub fn hmc_sample<T: Real, D: GradLogDensity<T> + ?Sized>(
    target: &D,
    cfg: &HmcConfig<T>,
    init: &[T],
    n: usize,
    burn: usize,
    rng: &mut RngStream,
) -> Result<Chain<T>> {
    cfg.validate()?;
    check_run(n, burn)?;
    let k = target.dim();
    check_dim(k, init.len())?;
    cfg.mass.validate(k)?;
    let mut cfg = cfg.clone();

    let mut theta = init.to_vec();
    let (mut v, mut g) = potential(target, &theta);
    if !v.is_finite() {
        return Err(Error::NonFinite("log-target at the initial point".into()));
    }
    let mut draws = Matrix::zeros(n, k);
    let mut accepted = Vec::with_capacity(n);
    let mut log_target = Vec::with_capacity(n);
    for t in 0..n {
        if cfg.adapt_mass && t == burn && burn >= 4 {
            let (_, cov) = column_stats(&Matrix::from_vec(burn - burn / 2, k, draws.as_slice()[(burn / 2) * k..burn * k].to_vec())?);
            let diag: Vec<T> = cov.diag().iter().map(|&s| T::lit(1.0 / s.max(1e-12))).collect();
            cfg.mass = MassMatrix::Diagonal(diag);
        }
        let rho = cfg.mass.sample_momentum(k, rng);
        let h0 = v + cfg.mass.kinetic(&rho);
        let traj = leapfrog(target, &theta, &rho, &g, &cfg);
        let h1 = traj.potential + cfg.mass.kinetic(&traj.rho);
        let u = rng.uniform();
        let accept = h1.is_finite() && u.ln() < (h0 - h1).as_f64();
        if accept {
            theta = traj.theta;
            v = traj.potential;
            g = traj.grad_potential;
        }
        accepted.push(accept);
        log_target.push(-v);
        draws.row_mut(t).copy_from_slice(&theta);
    }
    Ok(Chain { draws, accepted, log_target, burn_in: burn })
}

/// Per-dimension effective sample size of the post-burn-in draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EssReport {
    pub ess: Vec<f64>,
    /// Dimensions whose draws have zero variance; their ESS is reported as 1.
    pub degenerate: Vec<bool>,
}

impl EssReport {
    pub fn min(&self) -> f64 {
        self.ess.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// ESS via Geyer's initial positive sequence on each coordinate.
pub fn effective_sample_size<T: Real>(chain: &Chain<T>) -> Result<EssReport> {
    let post = chain.post_burn_in();
    if post.rows() < MIN_ESS_DRAWS {
        return Err(Error::ChainTooShort { needed: MIN_ESS_DRAWS, have: post.rows() });
    }
    let mut ess = Vec::with_capacity(post.cols());
    let mut degenerate = Vec::with_capacity(post.cols());
    for j in 0..post.cols() {
        let series: Vec<f64> = post.col(j).iter().map(|v| v.as_f64()).collect();
        let (e, d) = ess_series(&series);
        ess.push(e);
        degenerate.push(d);
    }
    Ok(EssReport { ess, degenerate })
}

/// ESS of a scalar series and whether it is degenerate (zero variance).
pub fn ess_series(x: &[f64]) -> (f64, bool) {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if !(c0 > 0.0) {
        return (1.0, true);
    }
    let autocorr = |lag: usize| -> f64 {
        (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum::<f64>() / (n as f64 * c0)
    };
    // τ = −1 + 2 Σ_m Γ_m with Γ_m = ρ_{2m} + ρ_{2m+1}, truncated at the first non-positive pair
    let mut tau = -1.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let gamma = if m == 0 { 1.0 } else { autocorr(2 * m) } + autocorr(2 * m + 1);
        if gamma <= 0.0 {
            break;
        }
        tau += 2.0 * gamma;
        m += 1;
    }
    let ess = (n as f64 / tau.max(1e-12)).clamp(1.0, n as f64);
    (ess, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::FnDensity;

    fn std_normal() -> FnDensity<impl Fn(&[f64]) -> f64> {
        FnDensity::new(1, |t: &[f64]| -0.5 * t[0] * t[0])
    }

    #[test]
    fn mh_recovers_standard_normal() {
        let chain = mh_sample(&std_normal(), &[2.4], &[0.0], 50_000, 10_000, &mut RngStream::new(1)).unwrap();
        let ess = effective_sample_size(&chain).unwrap();
        let m = chain.mean()[0];
        let var = chain.covariance()[(0, 0)];
        assert!(m.abs() < 3.0 * var.sqrt() / ess.ess[0].sqrt(), "mean {m}");
        assert!((var - 1.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn tiny_steps_are_almost_always_accepted() {
        let chain = mh_sample(&std_normal(), &[1e-6], &[0.3], 5_000, 1_000, &mut RngStream::new(2)).unwrap();
        assert!(chain.accept_rate() > 0.999);
    }

    #[test]
    fn flat_target_accepts_everything() {
        let flat = FnDensity::new(2, |_: &[f64]| 0.0);
        let chain = mh_sample(&flat, &[1.0, 3.0], &[0.0, 0.0], 1_000, 100, &mut RngStream::new(3)).unwrap();
        assert_eq!(chain.accept_rate(), 1.0);
    }

    #[test]
    fn mh_errors() {
        let bad = FnDensity::new(1, |_: &[f64]| f64::NEG_INFINITY);
        assert!(matches!(
            mh_sample(&bad, &[1.0], &[0.0], 10, 2, &mut RngStream::new(1)),
            Err(Error::NonFinite(_))
        ));
        assert!(mh_sample(&std_normal(), &[1.0], &[0.0], 10, 10, &mut RngStream::new(1)).is_err());
    }

    #[test]
    fn non_finite_proposals_are_rejected() {
        // support is x > 0
        let half = FnDensity::new(1, |t: &[f64]| if t[0] > 0.0 { -t[0] } else { f64::NEG_INFINITY });
        let chain = mh_sample(&half, &[1.0], &[1.0], 5_000, 500, &mut RngStream::new(8)).unwrap();
        assert!(chain.draws().as_slice().iter().all(|&v| v > 0.0));
    }

    /// Proposal over states {0,1,2} that always moves "up" with probability 0.7.
    struct Lopsided;

    impl Proposal<f64> for Lopsided {
        fn propose(&self, current: &[f64], rng: &mut RngStream) -> Vec<f64> {
            let s = current[0] as i64;
            let step = if rng.uniform() < 0.7 { 1 } else { 2 };
            vec![((s + step) % 3) as f64]
        }

        fn log_density(&self, to: &[f64], from: &[f64]) -> f64 {
            let step = (to[0] as i64 - from[0] as i64).rem_euclid(3);
            if step == 1 {
                0.7f64.ln()
            } else {
                0.3f64.ln()
            }
        }
    }

    #[test]
    fn hastings_correction_yields_target_distribution() {
        let p: [f64; 3] = [0.2, 0.5, 0.3];
        let target = FnDensity::new(1, move |t: &[f64]| p[t[0] as usize].ln());
        let chain = mh_sample_with(&target, &Lopsided, &[0.0], 100_000, 1_000, &mut RngStream::new(4)).unwrap();
        let post = chain.post_burn_in();
        let mut counts = [0.0; 3];
        for r in 0..post.rows() {
            counts[post[(r, 0)] as usize] += 1.0;
        }
        let tv: f64 = counts.iter().zip(&p).map(|(c, p)| (c / post.rows() as f64 - p).abs()).sum::<f64>() / 2.0;
        assert!(tv < 0.02, "total variation {tv}");
    }

    #[test]
    fn ess_of_iid_and_ar1_series() {
        let mut rng = RngStream::new(5);
        let iid: Vec<f64> = (0..20_000).map(|_| rng.standard_normal()).collect();
        let (e, d) = ess_series(&iid);
        assert!(!d && (e / 20_000.0 - 1.0).abs() < 0.15, "iid ess {e}");

        let phi = 0.9;
        let mut x = 0.0;
        let ar: Vec<f64> = (0..50_000)
            .map(|_| {
                x = phi * x + rng.standard_normal();
                x
            })
            .collect();
        let (e, _) = ess_series(&ar);
        let expected = 50_000.0 * (1.0 - phi) / (1.0 + phi);
        assert!((e / expected - 1.0).abs() < 0.25, "ar1 ess {e} vs {expected}");

        let (e, d) = ess_series(&[2.0; 500]);
        assert!(d && e == 1.0);
    }

    #[test]
    fn ess_requires_enough_draws() {
        let chain = mh_sample(&std_normal(), &[1.0], &[0.0], 120, 50, &mut RngStream::new(1)).unwrap();
        assert!(matches!(effective_sample_size(&chain), Err(Error::ChainTooShort { needed: 100, have: 70 })));
    }

    #[test]
    fn chain_text_round_trip() {
        let chain = mh_sample(&std_normal(), &[1.0], &[0.0], 50, 10, &mut RngStream::new(1)).unwrap();
        let mut buf = Vec::new();
        chain.write_text(&mut buf, "method = mh\nseed = 1").unwrap();
        let back = Chain::<f64>::read_text(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.burn_in(), 10);
        assert_eq!(back.draws(), chain.draws());
    }
}
