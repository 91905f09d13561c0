//! Verification toolkit: finite-difference gradient checks, the natural /
//! expectation gradient duality check, and Monte Carlo ELBO estimates.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gaussian::{ExpectationParams, GaussianVariational, NaturalParams};
use crate::linalg::{self, Cholesky, Matrix};
use crate::models::{Dataset, GaussianPrior, ProbModel};
use crate::rng::RngStream;
use crate::scalar::Real;

/// Differences at or below this are treated as exact agreement.
pub const ABS_FLOOR: f64 = 1e-8;

/// Central-difference step for coordinate value `x`.
pub fn fd_step(x: f64) -> f64 {
    1e-6 * (1.0 + x.abs())
}

/// Central-difference gradient of `f` at `x`.
pub fn numerical_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = fd_step(x[i]);
            p[i] = x[i] + h;
            let fp = f(&p);
            p[i] = x[i] - h;
            let fm = f(&p);
            p[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Relative discrepancy between two numbers with an absolute floor.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff <= ABS_FLOOR {
        return 0.0;
    }
    diff / a.abs().max(b.abs()).max(ABS_FLOOR)
}

/// Worst per-component relative error between `analytic` and central
/// differences of `f` at `x`.
pub fn finite_diff_check(f: &dyn Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64]) -> Result<f64> {
    check_dim(x.len(), analytic.len())?;
    let fd = numerical_gradient(f, x);
    Ok(fd.iter().zip(analytic).map(|(&a, &b)| relative_error(a, b)).fold(0.0, f64::max))
}

/// How the Fisher information of the natural parameters is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FimMode {
    /// Closed-form covariance of the sufficient statistics.
    Analytic,
    /// Central-difference Hessian of the log-partition function.
    FiniteDifference,
}

/// Outcome of [`fim_duality_check`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub natural_gradient: Vec<f64>,
    pub expectation_gradient: Vec<f64>,
    pub relative_error: f64,
}

/// Upper-triangle index pairs `(i, j)` with `i ≤ j`, row by row.
fn tri_pairs(k: usize) -> Vec<(usize, usize)> {
    (0..k).flat_map(|i| (i..k).map(move |j| (i, j))).collect()
}

/// Natural coordinates: `λ₁` followed by the upper triangle of `λ₂`, so that
/// `⟨λ₂, θθᵀ⟩ = Σ_{i≤j} c_ij φ_ij` with `φ_ii = θ_i²`, `φ_ij = 2θ_iθ_j`.
fn natural_coords(q: &GaussianVariational<f64>) -> Vec<f64> {
    let nat = q.to_natural();
    let mut c = nat.lambda1.clone();
    c.extend(tri_pairs(q.dim()).into_iter().map(|(i, j)| nat.lambda2[(i, j)]));
    c
}

fn from_natural_coords(c: &[f64], k: usize) -> Result<GaussianVariational<f64>> {
    let mut l2 = Matrix::zeros(k, k);
    for (idx, (i, j)) in tri_pairs(k).into_iter().enumerate() {
        l2[(i, j)] = c[k + idx];
        l2[(j, i)] = c[k + idx];
    }
    NaturalParams { lambda1: c[..k].to_vec(), lambda2: l2 }.to_common()
}

/// Expectation coordinates `E[φ] = (μ, M₂_ii, 2 M₂_ij)`.
fn expectation_coords(q: &GaussianVariational<f64>) -> Vec<f64> {
    let e = q.to_expectation();
    let mut m = e.m1.clone();
    m.extend(tri_pairs(q.dim()).into_iter().map(|(i, j)| if i == j { e.m2[(i, i)] } else { 2.0 * e.m2[(i, j)] }));
    m
}

fn from_expectation_coords(m: &[f64], k: usize) -> Result<GaussianVariational<f64>> {
    let mut m2 = Matrix::zeros(k, k);
    for (idx, (i, j)) in tri_pairs(k).into_iter().enumerate() {
        let v = if i == j { m[k + idx] } else { 0.5 * m[k + idx] };
        m2[(i, j)] = v;
        m2[(j, i)] = v;
    }
    ExpectationParams { m1: m[..k].to_vec(), m2 }.to_common()
}

/// Covariance of the sufficient statistics `φ(θ)` under `q`, equal to the
/// Hessian of the log-partition in natural coordinates.
fn analytic_fim(q: &GaussianVariational<f64>) -> Matrix<f64> {
    let k = q.dim();
    let mu = q.mean();
    let s = q.covariance();
    let pairs = tri_pairs(k);
    let n = k + pairs.len();
    let weight = |(i, j): (usize, usize)| if i == j { 1.0 } else { 2.0 };
    let cov_lin_quad = |a: usize, (i, j): (usize, usize)| mu[i] * s[(a, j)] + mu[j] * s[(a, i)];
    let cov_quad_quad = |(i, j): (usize, usize), (p, r): (usize, usize)| {
        s[(i, p)] * s[(j, r)]
            + s[(i, r)] * s[(j, p)]
            + mu[i] * mu[p] * s[(j, r)]
            + mu[i] * mu[r] * s[(j, p)]
            + mu[j] * mu[p] * s[(i, r)]
            + mu[j] * mu[r] * s[(i, p)]
    };
    let mut f = Matrix::zeros(n, n);
    for a in 0..k {
        for b in 0..k {
            f[(a, b)] = s[(a, b)];
        }
        for (idx, &pr) in pairs.iter().enumerate() {
            let v = weight(pr) * cov_lin_quad(a, pr);
            f[(a, k + idx)] = v;
            f[(k + idx, a)] = v;
        }
    }
    for (x, &p1) in pairs.iter().enumerate() {
        for (y, &p2) in pairs.iter().enumerate() {
            f[(k + x, k + y)] = weight(p1) * weight(p2) * cov_quad_quad(p1, p2);
        }
    }
    f
}

/// Central-difference Hessian of the log-partition at natural coordinates `c`.
fn numeric_fim(c: &[f64], k: usize) -> Result<Matrix<f64>> {
    let a = |c: &[f64]| -> Result<f64> {
        let mut l2 = Matrix::zeros(k, k);
        for (idx, (i, j)) in tri_pairs(k).into_iter().enumerate() {
            l2[(i, j)] = c[k + idx];
            l2[(j, i)] = c[k + idx];
        }
        NaturalParams { lambda1: c[..k].to_vec(), lambda2: l2 }.log_partition()
    };
    let n = c.len();
    let h: Vec<f64> = c.iter().map(|x| 1e-4 * (1.0 + x.abs())).collect();
    let mut hess = Matrix::zeros(n, n);
    let mut p = c.to_vec();
    for i in 0..n {
        for j in i..n {
            let mut eval = |si: f64, sj: f64| -> Result<f64> {
                p[i] += si * h[i];
                p[j] += sj * h[j];
                let v = a(&p);
                p[i] = c[i];
                p[j] = c[j];
                v
            };
            let v = if i == j {
                (eval(1.0, 1.0)? - 2.0 * a(c)? + eval(-1.0, -1.0)?) / (4.0 * h[i] * h[i])
            } else {
                (eval(1.0, 1.0)? - eval(1.0, -1.0)? - eval(-1.0, 1.0)? + eval(-1.0, -1.0)?) / (4.0 * h[i] * h[j])
            };
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(hess)
}

/// Compares `I_λ⁻¹ ∇_λ 𝓛` with `∇_m 𝓛` for an objective of `(μ, Σ)`.
///
/// Both gradients are taken by central differences through the respective
/// coordinate chart; the Fisher information is analytic or numeric.
pub fn fim_duality_check(
    q: &GaussianVariational<f64>,
    objective: &dyn Fn(&[f64], &Matrix<f64>) -> f64,
    mode: FimMode,
) -> Result<DualityReport> {
    let k = q.dim();
    if k == 0 || k > 3 {
        return Err(Error::invalid("duality check supports 1 ≤ k ≤ 3"));
    }
    let through = |q: Result<GaussianVariational<f64>>| match q {
        Ok(q) => objective(q.mean(), &q.covariance()),
        Err(_) => f64::NAN,
    };
    let c = natural_coords(q);
    let m = expectation_coords(q);
    let grad_c = numerical_gradient(&|c: &[f64]| through(from_natural_coords(c, k)), &c);
    let grad_m = numerical_gradient(&|m: &[f64]| through(from_expectation_coords(m, k)), &m);
    let fim = match mode {
        FimMode::Analytic => analytic_fim(q),
        FimMode::FiniteDifference => numeric_fim(&c, k)?,
    };
    let chol = Cholesky::new(&fim.symmetrize()).map_err(|_| Error::NotPositiveDefinite("numerical Fisher information".into()))?;
    let natural = chol.solve(&grad_c);
    let diff = linalg::norm2(&linalg::sub(&natural, &grad_m));
    let scale = linalg::norm2(&grad_m).max(linalg::norm2(&natural)).max(1e-300);
    Ok(DualityReport { natural_gradient: natural, expectation_gradient: grad_m, relative_error: diff / scale })
}

/// Monte Carlo ELBO estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElboEstimate {
    pub value: f64,
    pub stderr: f64,
    /// Draws discarded because a term was not finite.
    pub dropped: usize,
}

impl ElboEstimate {
    /// Mean and standard error of a set of per-draw values, skipping non-finite ones.
    pub fn from_terms(terms: &[f64]) -> Result<Self> {
        let kept: Vec<f64> = terms.iter().copied().filter(|v| v.is_finite()).collect();
        let dropped = terms.len() - kept.len();
        if kept.is_empty() {
            return Err(Error::NonFinite("every ELBO term".into()));
        }
        let n = kept.len() as f64;
        let mean = kept.iter().sum::<f64>() / n;
        let stderr = if kept.len() > 1 {
            (kept.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            f64::NAN
        };
        Ok(Self { value: mean, stderr, dropped })
    }
}

/// `E_q[log p(θ) + log p(D|θ) − log q(θ)]` by Monte Carlo over `n_s` draws.
pub fn elbo_estimate<T: Real>(
    q: &GaussianVariational<T>,
    model: &dyn ProbModel<T>,
    prior: &GaussianPrior<T>,
    data: &Dataset<T>,
    n_s: usize,
    rng: &mut RngStream,
) -> Result<ElboEstimate> {
    if n_s == 0 {
        return Err(Error::invalid("n_s must be at least 1"));
    }
    check_dim(q.dim(), prior.dim())?;
    let draws = q.sample_reparam(rng, n_s)?;
    let mut terms = Vec::with_capacity(n_s);
    for s in 0..n_s {
        let th = draws.row(s);
        let v = prior.log_density(th)? + model.log_lik(th, data)? - q.log_pdf(th)?;
        terms.push(v.as_f64());
    }
    ElboEstimate::from_terms(&terms)
}
