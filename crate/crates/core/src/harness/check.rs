//! Invariant suites behind `bnn check`: gradient correctness, natural-gradient
//! duality, SPD manifold properties and sampler moments.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::blackbox::{score_1d, ScoreChart};
use crate::diagnostics::{finite_diff_check, fim_duality_check, FimMode};
use crate::error::{Error, Result};
use crate::gaussian::GaussianVariational;
use crate::linalg::{self, Matrix, SymEigen};
use crate::manifold::{retract, transport, transport_factor, SpdPoint, TangentVector};
use crate::mcmc::{effective_sample_size, hamiltonian, hmc_sample, leapfrog, mh_sample, Chain, HmcConfig, MassMatrix};
use crate::models::{
    Activation, Dataset, GaussianPrior, GradLogDensity, Head, LinearRegression, LogisticRegression, Mlp, Posterior,
    ProbModel, Task,
};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Gradients,
    Duality,
    Manifold,
    Samplers,
    All,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Gradients => "gradients",
            Suite::Duality => "duality",
            Suite::Manifold => "manifold",
            Suite::Samplers => "samplers",
            Suite::All => "all",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gradients" => Suite::Gradients,
            "duality" => Suite::Duality,
            "manifold" => Suite::Manifold,
            "samplers" => Suite::Samplers,
            "all" => Suite::All,
            _ => return Err(Error::Config(format!("unknown check suite {s:?}"))),
        })
    }
}

/// Acceptance region for a measured value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Bound {
    AtMost { limit: f64 },
    Within { lo: f64, hi: f64 },
}

impl Bound {
    fn holds(&self, v: f64) -> bool {
        match *self {
            Bound::AtMost { limit } => v <= limit,
            Bound::Within { lo, hi } => v >= lo && v <= hi,
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::AtMost { limit } => write!(f, "<= {limit:.3e}"),
            Bound::Within { lo, hi } => write!(f, "in [{lo}, {hi}]"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckItem {
    pub suite: String,
    pub name: String,
    pub measured: f64,
    pub bound: Bound,
    pub passed: bool,
}

impl CheckItem {
    fn new(suite: &str, name: impl Into<String>, measured: f64, bound: Bound) -> Self {
        let passed = measured.is_finite() && bound.holds(measured);
        Self { suite: suite.into(), name: name.into(), measured, bound, passed }
    }
}

impl fmt::Display for CheckItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}/{}: measured {:.3e}, required {}", self.suite, self.name, self.measured, self.bound)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub items: Vec<CheckItem>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckItem> {
        self.items.iter().filter(|i| !i.passed)
    }

    pub fn render(&self) -> String {
        let mut out: String = self.items.iter().map(|i| format!("{i}\n")).collect();
        let failed = self.failures().count();
        out += &format!("{} checks, {} failed\n", self.items.len(), failed);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckOptions {
    pub seed: u64,
    /// Plant a sign error in the Gaussian score so the gradient suite must fail.
    pub fault_injection: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { seed: 20240611, fault_injection: false }
    }
}

pub fn run_check(suite: Suite, opts: CheckOptions) -> Result<CheckReport> {
    let root = RngStream::new(opts.seed);
    let mut items = Vec::new();
    let suites: &[Suite] = match suite {
        Suite::All => &[Suite::Gradients, Suite::Duality, Suite::Manifold, Suite::Samplers],
        Suite::Gradients => &[Suite::Gradients],
        Suite::Duality => &[Suite::Duality],
        Suite::Manifold => &[Suite::Manifold],
        Suite::Samplers => &[Suite::Samplers],
    };
    for s in suites {
        let mut rng = root.split(s.name());
        items.extend(match s {
            Suite::Gradients => gradient_suite(&mut rng, opts.fault_injection)?,
            Suite::Duality => duality_suite(&mut rng)?,
            Suite::Manifold => manifold_suite(&mut rng)?,
            Suite::Samplers => sampler_suite(&mut rng)?,
            Suite::All => unreachable!(),
        });
    }
    Ok(CheckReport { items })
}

// ---- gradients ----------------------------------------------------------------

/// Random instances per gradient check.
pub const GRADIENT_INSTANCES: usize = 20;
pub const GRADIENT_TOLERANCE: f64 = 1e-5;

fn random_vec(rng: &mut RngStream, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.standard_normal()).collect()
}

fn random_dataset(rng: &mut RngStream, n: usize, d: usize, cols: usize, task: Task) -> Result<Dataset<f64>> {
    let x = Matrix::from_vec(n, d, random_vec(rng, n * d, 1.0))?;
    let y: Vec<f64> = (0..n * cols)
        .map(|_| match task {
            Task::Regression => rng.standard_normal(),
            Task::BinaryClassification => f64::from(u8::from(rng.bernoulli(0.5))),
            Task::Multiclass { classes } => rng.index(classes) as f64,
        })
        .collect();
    Dataset::new(x, Matrix::from_vec(n, cols, y)?, task)
}

/// Worst finite-difference error of the posterior gradient
/// `∇[log p(θ) + Σ log p(D_i|θ)]` over random parameters and datasets.
fn model_gradient_error(model: &dyn ProbModel<f64>, rng: &mut RngStream) -> Result<f64> {
    let k = model.param_dim();
    let prior = GaussianPrior::isotropic(k, 0.5)?;
    let mut worst = 0.0f64;
    for _ in 0..GRADIENT_INSTANCES {
        let data = random_dataset(rng, 4, model.input_dim(), model.target_dim(), model.task())?;
        let post = Posterior::new(model, &prior, &data)?;
        let theta = random_vec(rng, k, 0.7);
        let (_, analytic) = post.log_density_and_grad(&theta)?;
        let f = |t: &[f64]| {
            use crate::models::LogDensity;
            post.log_density(t).unwrap_or(f64::NAN)
        };
        worst = worst.max(finite_diff_check(&f, &theta, &analytic)?);
    }
    Ok(worst)
}

/// `(∂/∂μ, ∂/∂Σ_upper) log q(θ)`, optionally with a planted sign error.
fn gaussian_score_under_test(q: &GaussianVariational<f64>, theta: &[f64], fault: bool) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut v, g) = q.score_gradients(theta)?;
    if fault {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    let k = q.dim();
    // a symmetric perturbation of Σ_ij (i < j) moves both off-diagonal entries
    let upper = (0..k).flat_map(|i| (i..k).map(move |j| (i, j))).map(|(i, j)| if i == j { g[(i, j)] } else { 2.0 * g[(i, j)] }).collect();
    Ok((v, upper))
}

fn random_spd(rng: &mut RngStream, k: usize, ridge: f64) -> Matrix<f64> {
    let a = Matrix::from_vec(k, k, random_vec(rng, k * k, 1.0)).expect("square");
    a.matmul(&a.transpose()).scale(1.0 / k as f64).add(&Matrix::scaled_identity(k, ridge))
}

fn gaussian_score_errors(rng: &mut RngStream, fault: bool) -> Result<(f64, f64)> {
    let (mut worst_mu, mut worst_sigma) = (0.0f64, 0.0f64);
    for i in 0..GRADIENT_INSTANCES {
        let k = 1 + i % 3;
        let mu = random_vec(rng, k, 1.0);
        let cov = random_spd(rng, k, 0.5);
        let q = GaussianVariational::from_covariance(mu.clone(), &cov)?;
        let theta = q.sample_one(rng);
        let (v, upper) = gaussian_score_under_test(&q, &theta, fault)?;
        let f_mu = |m: &[f64]| GaussianVariational::from_covariance(m.to_vec(), &cov).and_then(|q| q.log_pdf(&theta)).unwrap_or(f64::NAN);
        worst_mu = worst_mu.max(finite_diff_check(&f_mu, &mu, &v)?);
        let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i..k).map(move |j| (i, j))).collect();
        let s0: Vec<f64> = pairs.iter().map(|&(i, j)| cov[(i, j)]).collect();
        let f_sigma = |s: &[f64]| {
            let mut c = Matrix::zeros(k, k);
            for (&(i, j), &v) in pairs.iter().zip(s) {
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
            GaussianVariational::from_covariance(mu.clone(), &c).and_then(|q| q.log_pdf(&theta)).unwrap_or(f64::NAN)
        };
        worst_sigma = worst_sigma.max(finite_diff_check(&f_sigma, &s0, &upper)?);
    }
    Ok((worst_mu, worst_sigma))
}

fn factor_score_error(rng: &mut RngStream) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..GRADIENT_INSTANCES {
        let p = [rng.standard_normal(), 0.5 * rng.standard_normal()];
        let theta = p[0] + p[1].exp() * rng.standard_normal();
        let (gm, gs) = score_1d(p[0], (2.0 * p[1]).exp(), theta, ScoreChart::MeanLogStd);
        let f = |z: &[f64]| {
            let var = (2.0 * z[1]).exp();
            -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (theta - z[0]).powi(2) / var)
        };
        worst = worst.max(finite_diff_check(&f, &p, &[gm, gs])?);
    }
    Ok(worst)
}

fn gradient_suite(rng: &mut RngStream, fault: bool) -> Result<Vec<CheckItem>> {
    let bound = Bound::AtMost { limit: GRADIENT_TOLERANCE };
    let models: Vec<(&str, Box<dyn ProbModel<f64>>)> = vec![
        ("linear-regression", Box::new(LinearRegression::new(4, 0.7)?)),
        ("logistic-regression", Box::new(LogisticRegression::new(4))),
        ("mlp-tanh-gaussian", Box::new(Mlp::new(vec![3, 5, 2], Activation::Tanh, Head::Gaussian { noise_var: 0.5 })?)),
        ("mlp-relu-bernoulli", Box::new(Mlp::new(vec![3, 4, 4, 1], Activation::Relu, Head::Bernoulli)?)),
        ("mlp-tanh-softmax", Box::new(Mlp::new(vec![2, 4, 3], Activation::Tanh, Head::Softmax)?)),
    ];
    let mut items = Vec::new();
    for (name, m) in &models {
        let err = model_gradient_error(m.as_ref(), rng)?;
        items.push(CheckItem::new("gradients", format!("{name} log-posterior gradient"), err, bound));
    }
    let (mu, sigma) = gaussian_score_errors(rng, fault)?;
    items.push(CheckItem::new("gradients", "gaussian score wrt mean", mu, bound));
    items.push(CheckItem::new("gradients", "gaussian score wrt covariance", sigma, bound));
    items.push(CheckItem::new("gradients", "factorized score wrt (mean, log-std)", factor_score_error(rng)?, bound));
    Ok(items)
}

// ---- duality ------------------------------------------------------------------

/// Smooth, non-trivial test objective in `(μ, Σ)`.
pub fn duality_test_objective(mu: &[f64], sigma: &Matrix<f64>) -> f64 {
    let k = mu.len();
    let mut v = 0.0;
    for i in 0..k {
        v += (0.7 + 0.3 * i as f64) * mu[i] - 0.4 * mu[i] * mu[i];
        for j in 0..k {
            v -= 0.5 * (1.0 + 0.2 * (i + j) as f64) * sigma[(i, j)] * if i == j { 1.0 } else { 0.3 };
        }
    }
    v + 0.25 * sigma[(0, 0)] * sigma[(0, 0)] + 0.1 * mu[0] * sigma[(k - 1, k - 1)]
}

fn duality_suite(rng: &mut RngStream) -> Result<Vec<CheckItem>> {
    let mut items = Vec::new();
    let q1 = GaussianVariational::from_covariance(vec![0.0], &Matrix::identity(1))?;
    let r1 = fim_duality_check(&q1, &duality_test_objective, FimMode::Analytic)?;
    items.push(CheckItem::new("duality", "k=1 standard normal, analytic FIM", r1.relative_error, Bound::AtMost { limit: 1e-6 }));
    for k in [2usize, 3] {
        let q = GaussianVariational::from_covariance(random_vec(rng, k, 0.5), &random_spd(rng, k, 0.6))?;
        let r = fim_duality_check(&q, &duality_test_objective, FimMode::FiniteDifference)?;
        items.push(CheckItem::new("duality", format!("k={k} random SPD, numeric FIM"), r.relative_error, Bound::AtMost { limit: 1e-4 }));
    }
    let q2 = GaussianVariational::from_covariance(random_vec(rng, 2, 0.5), &random_spd(rng, 2, 0.6))?;
    let base = fim_duality_check(&q2, &duality_test_objective, FimMode::Analytic)?;
    let scaled = fim_duality_check(&q2, &|m: &[f64], s: &Matrix<f64>| 7.5 * duality_test_objective(m, s), FimMode::Analytic)?;
    let ratio = linalg::norm2(&scaled.natural_gradient) / linalg::norm2(&base.natural_gradient);
    items.push(CheckItem::new("duality", "rescaling objective by 7.5 rescales natural gradient", (ratio - 7.5).abs() / 7.5, Bound::AtMost { limit: 1e-6 }));
    items.push(CheckItem::new(
        "duality",
        "rescaling objective leaves discrepancy unchanged",
        (scaled.relative_error - base.relative_error).abs(),
        Bound::AtMost { limit: 1e-6 },
    ));
    Ok(items)
}

// ---- manifold -----------------------------------------------------------------

fn random_symmetric(rng: &mut RngStream, k: usize) -> Matrix<f64> {
    Matrix::from_vec(k, k, random_vec(rng, k * k, 1.0)).expect("square").symmetrize()
}

/// General square inverse by Gauss–Jordan elimination with partial pivoting.
fn general_inverse(a: &Matrix<f64>) -> Result<Matrix<f64>> {
    let n = a.rows();
    let mut m = a.clone();
    let mut inv = Matrix::identity(n);
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[(i, c)].abs().total_cmp(&m[(j, c)].abs())).expect("non-empty");
        if m[(p, c)].abs() < 1e-300 {
            return Err(Error::NotPositiveDefinite("singular matrix in Denman–Beavers iteration".into()));
        }
        for j in 0..n {
            let (a1, a2) = (m[(c, j)], m[(p, j)]);
            m[(c, j)] = a2;
            m[(p, j)] = a1;
            let (b1, b2) = (inv[(c, j)], inv[(p, j)]);
            inv[(c, j)] = b2;
            inv[(p, j)] = b1;
        }
        let d = m[(c, c)];
        for j in 0..n {
            m[(c, j)] /= d;
            inv[(c, j)] /= d;
        }
        for i in 0..n {
            if i != c {
                let f = m[(i, c)];
                for j in 0..n {
                    m[(i, j)] -= f * m[(c, j)];
                    inv[(i, j)] -= f * inv[(c, j)];
                }
            }
        }
    }
    Ok(inv)
}

/// Principal square root by the Denman–Beavers iteration, an oracle for the
/// non-symmetric product `η ζ⁻¹`.
pub fn denman_beavers_sqrt(a: &Matrix<f64>) -> Result<Matrix<f64>> {
    let n = a.rows();
    let mut y = a.clone();
    let mut z = Matrix::identity(n);
    for _ in 0..100 {
        let yi = general_inverse(&y)?;
        let zi = general_inverse(&z)?;
        let y_next = y.add(&zi).scale(0.5);
        let z_next = z.add(&yi).scale(0.5);
        let delta = y_next.sub(&y).max_abs();
        y = y_next;
        z = z_next;
        if delta < 1e-15 * y.max_abs() {
            break;
        }
    }
    Ok(y)
}

fn manifold_suite(rng: &mut RngStream) -> Result<Vec<CheckItem>> {
    let mut items = Vec::new();
    let s = "manifold";

    let zeta = SpdPoint::new(random_spd(rng, 4, 0.5))?;
    let r0 = retract(&zeta, &TangentVector::zeros(4))?;
    items.push(CheckItem::new(s, "retraction of the zero step is the identity", r0.value().sub(zeta.value()).max_abs(), Bound::AtMost { limit: 0.0 }));

    let one = SpdPoint::new(Matrix::from_rows(&[vec![1.0f64]]))?;
    let r = retract(&one, &TangentVector::new(&Matrix::from_rows(&[vec![0.2]]))?)?;
    items.push(CheckItem::new(s, "scalar retraction 1 + 0.2 + 0.02", (r.value()[(0, 0)] - 1.22).abs(), Bound::AtMost { limit: 1e-14 }));

    // ‖R(tξ) − (ζ + tξ)‖ / t² must settle as t halves
    let xi = TangentVector::new(&random_symmetric(rng, 4))?;
    let mut ratios = Vec::new();
    for j in 0..8 {
        let t = 0.1 * 0.5f64.powi(j);
        let rt = retract(&zeta, &xi.scale(t))?;
        let lin = zeta.value().add(&xi.value().scale(t));
        ratios.push(rt.value().sub(&lin).frobenius_norm() / (t * t));
    }
    let drift = ratios.windows(2).map(|w| (w[1] / w[0] - 1.0).abs()).fold(0.0, f64::max);
    items.push(CheckItem::new(s, "first-order agreement ratio stable under t-halving", drift, Bound::AtMost { limit: 1e-6 }));

    let moved = transport(&zeta, &zeta, &xi)?;
    items.push(CheckItem::new(s, "transport at coincident points is the identity", moved.value().sub(xi.value()).max_abs(), Bound::AtMost { limit: 1e-12 }));
    let e_self = transport_factor(&zeta, &zeta)?;
    items.push(CheckItem::new(s, "transport factor at coincident points", e_self.sub(&Matrix::identity(4)).max_abs(), Bound::AtMost { limit: 1e-12 }));

    let four = SpdPoint::new(Matrix::from_rows(&[vec![4.0f64]]))?;
    let t1 = transport(&one, &four, &TangentVector::new(&Matrix::from_rows(&[vec![0.3]]))?)?;
    items.push(CheckItem::new(s, "scalar transport 2 * 0.3 * 2", (t1.value()[(0, 0)] - 1.2).abs(), Bound::AtMost { limit: 1e-12 }));

    let mut asym = 0.0f64;
    for _ in 0..20 {
        let from = SpdPoint::new(random_spd(rng, 4, 0.3))?;
        let to = SpdPoint::new(random_spd(rng, 4, 0.3))?;
        let x = random_symmetric(rng, 4);
        let e = transport_factor(&from, &to)?;
        let raw = e.matmul(&x).matmul(&e.transpose());
        asym = asym.max(raw.asymmetry());
    }
    items.push(CheckItem::new(s, "transport preserves symmetry (k=4, 20 pairs)", asym, Bound::AtMost { limit: 1e-10 }));

    let mut db_err = 0.0f64;
    for k in 1..=4 {
        let from = SpdPoint::new(random_spd(rng, k, 0.4))?;
        let to = SpdPoint::new(random_spd(rng, k, 0.4))?;
        let e = transport_factor(&from, &to)?;
        let product = to.value().matmul(&from.inverse());
        let oracle = denman_beavers_sqrt(&product)?;
        db_err = db_err.max(e.sub(&oracle).max_abs() / oracle.max_abs());
    }
    items.push(CheckItem::new(s, "transport factor equals principal root (k=1..4)", db_err, Bound::AtMost { limit: 1e-9 }));

    let mut failures = 0usize;
    for _ in 0..1000 {
        let k = 1 + rng.index(8);
        let base = SpdPoint::new(random_spd(rng, k, 0.05))?;
        let lmin = SymEigen::new(base.value())?.min_value();
        let x = random_symmetric(rng, k);
        let norm = SymEigen::new(&x)?.max_abs_value();
        let step = x.scale(0.5 * lmin * rng.uniform() / norm.max(1e-300));
        if retract(&base, &TangentVector::new(&step)?).is_err() {
            failures += 1;
        }
    }
    items.push(CheckItem::new(s, "retraction stays SPD over 1000 random steps (k<=8)", failures as f64, Bound::AtMost { limit: 0.0 }));
    Ok(items)
}

// ---- samplers -----------------------------------------------------------------

/// Correlated 2-D Gaussian target shared by the sampler checks.
pub fn sampler_target() -> Result<(GaussianPrior<f64>, Vec<f64>, Matrix<f64>)> {
    let mean = vec![1.0, -1.0];
    let cov = Matrix::from_rows(&[vec![1.0, 0.8], vec![0.8, 1.0]]);
    let precision = linalg::Cholesky::new(&cov)?.inverse().symmetrize();
    Ok((GaussianPrior::full(mean.clone(), &precision)?, mean, cov))
}

/// Mean error in Monte Carlo standard errors and worst relative covariance error.
pub fn chain_moment_errors(chain: &Chain<f64>, mean: &[f64], cov: &Matrix<f64>) -> Result<(f64, f64)> {
    let ess = effective_sample_size(chain)?;
    let m = chain.mean();
    let c = chain.covariance();
    let mut z = 0.0f64;
    for j in 0..mean.len() {
        let se = (c[(j, j)] / ess.ess[j]).sqrt();
        z = z.max((m[j] - mean[j]).abs() / se);
    }
    let mut rel = 0.0f64;
    for i in 0..mean.len() {
        for j in 0..mean.len() {
            rel = rel.max((c[(i, j)] - cov[(i, j)]).abs() / cov[(i, j)].abs());
        }
    }
    Ok((z, rel))
}

/// `|ΔH(ε)| / |ΔH(ε/2)|` over a fixed integration time from a fixed state.
pub fn leapfrog_energy_ratio(target: &GaussianPrior<f64>, eps: f64, time: f64) -> Result<f64> {
    let theta = vec![1.6, -0.2];
    let rho = vec![0.9, -1.3];
    let mut errs = Vec::new();
    for e in [eps, eps / 2.0] {
        let steps = (time / e).round() as usize;
        let cfg = HmcConfig::new(e, steps)?;
        let (_, g) = target.log_density_and_grad(&theta)?;
        let traj = leapfrog(target, &theta, &rho, &linalg::scale(&g, -1.0), &cfg);
        let h0 = hamiltonian(target, &theta, &rho, &MassMatrix::Identity);
        let h1 = hamiltonian(target, &traj.theta, &traj.rho, &MassMatrix::Identity);
        errs.push((h1 - h0).abs());
    }
    Ok(errs[0] / errs[1])
}

fn sampler_suite(rng: &mut RngStream) -> Result<Vec<CheckItem>> {
    let (target, mean, cov) = sampler_target()?;
    let s = "samplers";
    let mut items = Vec::new();
    let mh = mh_sample(&target, &[1.0, 1.0], &[0.0, 0.0], 60_000, 5_000, &mut rng.split("mh"))?;
    let (z, rel) = chain_moment_errors(&mh, &mean, &cov)?;
    items.push(CheckItem::new(s, "MH mean error in MC standard errors", z, Bound::AtMost { limit: 3.0 }));
    items.push(CheckItem::new(s, "MH covariance relative error", rel, Bound::AtMost { limit: 0.1 }));

    let cfg = HmcConfig::new(0.25, 8)?;
    let hmc = hmc_sample(&target, &cfg, &[0.0, 0.0], 6_000, 1_000, &mut rng.split("hmc"))?;
    let (z, rel) = chain_moment_errors(&hmc, &mean, &cov)?;
    items.push(CheckItem::new(s, "HMC mean error in MC standard errors", z, Bound::AtMost { limit: 3.0 }));
    items.push(CheckItem::new(s, "HMC covariance relative error", rel, Bound::AtMost { limit: 0.1 }));

    let ratio = leapfrog_energy_ratio(&target, 0.1, 1.0)?;
    items.push(CheckItem::new(s, "leapfrog energy error ratio when step halves", ratio, Bound::Within { lo: 3.0, hi: 5.0 }));
    Ok(items)
}
