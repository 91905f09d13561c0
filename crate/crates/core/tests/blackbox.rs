use bayes_nn::blackbox::{bbb_gradient, bbb_step, bbvi_gradient, ngbbvi_gradients, BbbState, FactorizedPosterior};
use bayes_nn::diagnostics::finite_diff_check;
use bayes_nn::linalg::{is_spd, Matrix};
use bayes_nn::models::{conjugate_posterior, synthetic_linear, LinearRegression};
use bayes_nn::{Dataset, GaussianPrior, Posterior, RngStream, Task};
use proptest::prelude::*;

/// One-dimensional regression with a handful of points, so the posterior
/// standard deviation is not tiny.
fn scalar_regression() -> Dataset<f64> {
    let x = Matrix::from_rows(&[vec![1.0], vec![0.5], vec![-0.7], vec![1.2], vec![0.3]]);
    let y = Matrix::from_rows(&[vec![1.1], vec![0.4], vec![-0.9], vec![1.0], vec![0.5]]);
    Dataset::new(x, y, Task::Regression).unwrap()
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bbb_gradient_matches_frozen_noise_differences(seed in any::<u64>(), batch in 1usize..8) {
        let mut rng = RngStream::new(seed);
        let (data, _) = synthetic_linear::<f64>(8, 3, 0.5, &mut rng);
        let model = LinearRegression::new(3, 0.5).unwrap();
        let prior = GaussianPrior::isotropic(3, 2.0).unwrap();
        let post = Posterior::new(&model, &prior, &data).unwrap();
        let sub = data.subset(&(0..batch).collect::<Vec<_>>());
        let scale = 8.0 / batch as f64;
        let mu = rng.normal_vec::<f64>(3);
        let rho: Vec<f64> = rng.normal_vec::<f64>(3).iter().map(|r| r - 1.0).collect();
        let eps = rng.normal_vec::<f64>(3);
        let state = BbbState::new(mu.clone(), rho.clone()).unwrap();
        let g = bbb_gradient(&state, &eps, &post, &sub, scale).unwrap();
        let params: Vec<f64> = mu.iter().chain(&rho).copied().collect();
        let f = |p: &[f64]| {
            let s = BbbState::new(p[..3].to_vec(), p[3..].to_vec()).unwrap();
            bbb_gradient(&s, &eps, &post, &sub, scale).unwrap().f
        };
        let analytic: Vec<f64> = g.grad_mu.iter().chain(&g.grad_rho).copied().collect();
        prop_assert!(finite_diff_check(&f, &params, &analytic).unwrap() < 1e-5);
        // frozen noise is deterministic
        prop_assert_eq!(g, bbb_gradient(&state, &eps, &post, &sub, scale).unwrap());
    }

    #[test]
    fn ngbbvi_fisher_estimates_are_symmetric_psd(seed in any::<u64>(), n_s in 8usize..64) {
        let (data, _) = synthetic_linear::<f64>(20, 4, 1.0, &mut RngStream::new(seed));
        let model = LinearRegression::new(4, 1.0).unwrap();
        let prior = GaussianPrior::isotropic(4, 1.0).unwrap();
        let post = Posterior::new(&model, &prior, &data).unwrap();
        let q = FactorizedPosterior::new(vec![0.1; 4], vec![-1.0; 4], vec![0..2, 2..4]).unwrap();
        let (grads, _) = ngbbvi_gradients(&q, &post, n_s, true, &mut RngStream::new(seed).split("draws")).unwrap();
        for g in grads {
            prop_assert!(g.fim.asymmetry() == 0.0);
            let mut shifted = g.fim.clone();
            shifted.add_scaled(1e-9 * g.fim.trace().max(1.0), &Matrix::identity(g.fim.rows()));
            prop_assert!(is_spd(&shifted));
        }
    }
}

#[test]
fn bbb_small_step_decreases_frozen_objective() {
    let data = scalar_regression();
    let model = LinearRegression::new(1, 1.0).unwrap();
    let prior = GaussianPrior::isotropic(1, 1.0).unwrap();
    let post = Posterior::new(&model, &prior, &data).unwrap();
    let state = BbbState::from_std(vec![-0.5], &[0.8]).unwrap();
    let eps = [0.3];
    let g = bbb_gradient(&state, &eps, &post, &data, 1.0).unwrap();
    let beta = 1e-3;
    let moved = BbbState::new(vec![state.mu[0] - beta * g.grad_mu[0]], vec![state.rho[0] - beta * g.grad_rho[0]]).unwrap();
    assert!(bbb_gradient(&moved, &eps, &post, &data, 1.0).unwrap().f < g.f);
}

#[test]
fn bbb_recovers_scalar_conjugate_posterior() {
    let data = scalar_regression();
    let model = LinearRegression::new(1, 1.0).unwrap();
    let prior = GaussianPrior::isotropic(1, 1.0).unwrap();
    let post = Posterior::new(&model, &prior, &data).unwrap();
    let exact = conjugate_posterior(&prior, &data, 1.0).unwrap();
    let mut state = BbbState::from_std(vec![0.0], &[1.0]).unwrap();
    let mut rng = RngStream::new(12).split("posterior-draws");
    for _ in 0..5000 {
        state = bbb_step(&state, &post, &data, 0.01, 4, &mut rng).unwrap().0;
    }
    let (mu, sigma) = (state.mu[0], state.sigma()[0]);
    let (mu_x, sigma_x) = (exact.mean()[0], exact.variances()[0].sqrt());
    assert!((mu - mu_x).abs() < 0.05 && (sigma - sigma_x).abs() < 0.05, "({mu}, {sigma}) vs ({mu_x}, {sigma_x})");
}

#[test]
fn bbvi_estimator_is_unbiased_against_closed_form() {
    // log p(D, θ) = −½Aθ² + bθ + c, so with q = N(μ, σ²) the ELBO gradient in
    // (μ, log σ) is (b − Aμ, 1 − Aσ²)
    let data = scalar_regression();
    let model = LinearRegression::new(1, 1.0).unwrap();
    let prior = GaussianPrior::isotropic(1, 1.0).unwrap();
    let post = Posterior::new(&model, &prior, &data).unwrap();
    let exact = conjugate_posterior(&prior, &data, 1.0).unwrap();
    let a = exact.precision()[(0, 0)];
    let b = a * exact.mean()[0];
    let (mu, log_std) = (0.3, -0.4f64);
    let q = FactorizedPosterior::fully_factorized(vec![mu], vec![log_std]).unwrap();
    let root = RngStream::new(77);
    let (mut gm, mut gs) = (Vec::new(), Vec::new());
    for r in 0..1000 {
        let (g, _) = bbvi_gradient(&q, &post, 64, &mut root.split_index(r)).unwrap();
        gm.push(g.mean[0]);
        gs.push(g.log_std[0]);
    }
    let want = [b - a * mu, 1.0 - a * (2.0 * log_std).exp()];
    for (samples, w) in [gm, gs].iter().zip(want) {
        let (m, se) = mean_and_stderr(samples);
        assert!((m - w).abs() < 3.0 * se, "estimate {m} ± {se}, closed form {w}");
    }
}

#[test]
fn ngbbvi_fisher_converges_to_analytic_value() {
    // in (μ, log σ) coordinates the Gaussian Fisher matrix is diag(1/σ², 2)
    let q = FactorizedPosterior::fully_factorized(vec![0.5], vec![(0.7f64).ln()]).unwrap();
    let flat = bayes_nn::models::FnDensity::new(1, |_: &[f64]| 0.0);
    let (grads, _) = ngbbvi_gradients(&q, &flat, 20_000, true, &mut RngStream::new(4)).unwrap();
    let fim = &grads[0].fim;
    let want = [1.0 / 0.49, 2.0];
    for (i, w) in want.iter().enumerate() {
        assert!((fim[(i, i)] - w).abs() < 0.1 * w, "diag {i}: {} vs {w}", fim[(i, i)]);
    }
    assert!(fim[(0, 1)].abs() < 0.1);
}

#[test]
fn ngbbvi_gradient_averages_to_zero_when_target_is_q() {
    // the other factors' log-densities stay in each factor's weight, so single
    // estimates are noisy; only the average vanishes
    let q = FactorizedPosterior::fully_factorized(vec![0.2, -0.4], vec![-0.5, 0.1]).unwrap();
    let same = q.clone();
    let target = bayes_nn::models::FnDensity::new(2, move |t: &[f64]| same.log_pdf(t));
    let root = RngStream::new(9);
    let reps: Vec<Vec<f64>> = (0..500)
        .map(|r| {
            let (grads, _) = ngbbvi_gradients(&q, &target, 32, true, &mut root.split_index(r)).unwrap();
            grads.iter().flat_map(|g| g.euclidean.clone()).collect()
        })
        .collect();
    for j in 0..reps[0].len() {
        let col: Vec<f64> = reps.iter().map(|r| r[j]).collect();
        let (m, se) = mean_and_stderr(&col);
        assert!(m.abs() < 4.0 * se, "coordinate {j}: {m} ± {se}");
    }
}
