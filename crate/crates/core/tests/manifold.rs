use bayes_nn::linalg::{Matrix, SymEigen};
use bayes_nn::manifold::{
    emgvb_gradients, mgvb_gradients, retract, transport, transport_factor, Emgvb, EmgvbBranch, EmgvbConfig, EmgvbPrecision, MatrixGradient,
    Mgvb, MgvbConfig, SpdPoint, TangentVector,
};
use bayes_nn::models::{conjugate_posterior, synthetic_linear, synthetic_logistic, LinearRegression, LogisticRegression};
use bayes_nn::{CovRepr, Dataset, GaussianPrior, Posterior, RngStream, Task, VariationalOptimizer};
use proptest::prelude::*;

fn spd(k: usize, entries: &[f64]) -> Matrix<f64> {
    let a = Matrix::from_vec(k, k, entries[..k * k].to_vec()).unwrap();
    let mut s = a.matmul(&a.transpose());
    s.add_scaled(0.3, &Matrix::identity(k));
    s.symmetrize()
}

fn sym(k: usize, entries: &[f64]) -> Matrix<f64> {
    Matrix::from_vec(k, k, entries[..k * k].to_vec()).unwrap().symmetrize()
}

fn pair(max_k: usize) -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>)> {
    (1..=max_k).prop_flat_map(|k| (Just(k), prop::collection::vec(-1.0..1.0f64, k * k), prop::collection::vec(-1.0..1.0f64, k * k)))
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn admissible_retractions_stay_spd((k, a, b) in pair(8)) {
        let base = SpdPoint::new(spd(k, &a)).unwrap();
        let lam_min = SymEigen::new(base.value()).unwrap().min_value();
        let dir = sym(k, &b);
        let norm = dir.frobenius_norm();
        prop_assume!(norm > 0.0);
        let xi = TangentVector::new(&dir.scale(0.5 * lam_min / norm)).unwrap();
        let next = retract(&base, &xi).unwrap();
        prop_assert!(next.value().asymmetry() < 1e-12 * next.value().max_abs());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn transport_factor_is_the_principal_root((k, a, b) in pair(4)) {
        let from = SpdPoint::new(spd(k, &a)).unwrap();
        let to = SpdPoint::new(spd(k, &b)).unwrap();
        let e = transport_factor(&from, &to).unwrap();
        // E² = η ζ⁻¹ and E ζ Eᵀ = η
        let target = to.value().matmul(&from.inverse());
        let scale = target.max_abs().max(1.0);
        prop_assert!(e.matmul(&e).sub(&target).max_abs() < 1e-8 * scale);
        prop_assert!(e.matmul(from.value()).matmul(&e.transpose()).sub(to.value()).max_abs() < 1e-8 * to.value().max_abs());
    }

    #[test]
    fn transport_preserves_symmetry_and_fixes_identity((k, a, b) in pair(4), xs in prop::collection::vec(-1.0..1.0f64, 16)) {
        let from = SpdPoint::new(spd(k, &a)).unwrap();
        let to = SpdPoint::new(spd(k, &b)).unwrap();
        let xi = TangentVector::new(&sym(k, &xs)).unwrap();
        let moved = transport(&from, &to, &xi).unwrap();
        prop_assert!(moved.value().asymmetry() < 1e-10 * moved.value().max_abs().max(1.0));
        let same = transport(&from, &SpdPoint::new(from.value().clone()).unwrap(), &xi).unwrap();
        prop_assert!(same.value().sub(xi.value()).max_abs() < 1e-12);
    }

    #[test]
    fn retraction_agrees_with_the_straight_line_to_first_order((k, a, b) in pair(5)) {
        let base = SpdPoint::new(spd(k, &a)).unwrap();
        let xi = sym(k, &b);
        prop_assume!(xi.frobenius_norm() > 0.1);
        // the gap to Σ + tξ is O(t²): halving t quarters it
        let ratio = |t: f64| {
            let r = retract(&base, &TangentVector::new(&xi.scale(t)).unwrap()).unwrap();
            r.value().sub(&base.value().add(&xi.scale(t))).frobenius_norm() / (t * t)
        };
        let (r1, r2) = (ratio(1e-2), ratio(5e-3));
        prop_assert!((r1 / r2 - 1.0).abs() < 1e-4, "{r1} {r2}");
    }
}

#[test]
fn mgvb_scalar_gradient_matches_kronecker_identity() {
    // 1-D conjugate ELBO: ∇_μ𝓛 = b − Aμ and ∇_{σ²}𝓛 = −A/2 + 1/(2σ²), so the
    // MGVB direction averages to (σ²∇_μ𝓛, σ⁴∇_{σ²}𝓛)
    let (data, _) = synthetic_linear::<f64>(6, 1, 1.0, &mut RngStream::new(2));
    let model = LinearRegression::new(1, 1.0).unwrap();
    let prior = GaussianPrior::isotropic(1, 1.0).unwrap();
    let post = Posterior::new(&model, &prior, &data).unwrap();
    let exact = conjugate_posterior(&prior, &data, 1.0).unwrap();
    let a = exact.precision()[(0, 0)];
    let b = a * exact.mean()[0];
    let (mu, var) = (0.4, 0.3);
    let sigma = SpdPoint::new(Matrix::from_rows(&[vec![var]])).unwrap();
    let root = RngStream::new(8);
    let (mut gm, mut gs) = (Vec::new(), Vec::new());
    for r in 0..2000 {
        let g = mgvb_gradients(&[mu], &sigma, &post, 32, true, &mut root.split_index(r)).unwrap();
        gm.push(g.mu[0]);
        let MatrixGradient::Full(m) = g.matrix else { unreachable!() };
        gs.push(m[(0, 0)]);
    }
    let want = [var * (b - a * mu), var * var * (-0.5 * a + 0.5 / var)];
    for (samples, w) in [gm, gs].iter().zip(want) {
        let (m, se) = mean_and_stderr(samples);
        assert!((m - w).abs() < 3.0 * se, "{m} ± {se} vs {w}");
    }
}

#[test]
fn emgvb_branches_estimate_the_same_gradient() {
    let (data, _) = synthetic_logistic::<f64>(80, 3, &mut RngStream::new(14));
    let model = LogisticRegression::new(3);
    let prior = GaussianPrior::isotropic(3, 1.0).unwrap();
    let post = Posterior::new(&model, &prior, &data).unwrap();
    let mu = vec![0.3, -0.2, 0.5];
    let prec = EmgvbPrecision::Full(SpdPoint::new(Matrix::scaled_identity(3, 4.0)).unwrap());
    let root = RngStream::new(15);
    let flat = |branch| -> Vec<Vec<f64>> {
        (0..500)
            .map(|r| {
                let g = emgvb_gradients(&mu, &prec, &post, 16, branch, false, &mut root.split_index(r)).unwrap();
                let MatrixGradient::Full(m) = g.matrix else { unreachable!() };
                g.mu.iter().chain(m.as_slice()).copied().collect()
            })
            .collect()
    };
    let (gauss, h) = (flat(EmgvbBranch::GaussianPrior), flat(EmgvbBranch::HFunction));
    for j in 0..gauss[0].len() {
        let (m1, s1) = mean_and_stderr(&gauss.iter().map(|g| g[j]).collect::<Vec<_>>());
        let (m2, s2) = mean_and_stderr(&h.iter().map(|g| g[j]).collect::<Vec<_>>());
        assert!((m1 - m2).abs() < 3.0 * (s1 * s1 + s2 * s2).sqrt(), "coordinate {j}: {m1} ± {s1} vs {m2} ± {s2}");
    }
}

#[test]
fn mgvb_and_emgvb_share_the_scalar_fixed_point() {
    let (data, _) = synthetic_linear::<f64>(8, 1, 1.0, &mut RngStream::new(4));
    let model = LinearRegression::new(1, 1.0).unwrap();
    let prior = GaussianPrior::isotropic(1, 1.0).unwrap();
    let post = Posterior::new(&model, &prior, &data).unwrap();
    let q0 = prior.to_gaussian(CovRepr::FullCholeskyOfCov).unwrap();
    let mut mgvb = Mgvb::new(&q0, MgvbConfig { beta: 0.01, ..MgvbConfig::default() }, &RngStream::new(1)).unwrap();
    let mut emgvb = Emgvb::new(&q0, EmgvbConfig { beta: 0.01, ..EmgvbConfig::default() }, &RngStream::new(2)).unwrap();
    for _ in 0..4000 {
        mgvb.step(&post).unwrap();
        emgvb.step(&post).unwrap();
    }
    let (a, b) = (mgvb.posterior().unwrap(), emgvb.posterior().unwrap());
    assert!((a.mean()[0] - b.mean()[0]).abs() < 0.05, "means {} {}", a.mean()[0], b.mean()[0]);
    assert!((a.variances()[0] - b.variances()[0]).abs() < 0.05, "variances {} {}", a.variances()[0], b.variances()[0]);
}

#[test]
fn mgvb_elbo_trace_keeps_improving_on_logistic_regression() {
    let (data, _) = synthetic_logistic::<f64>(200, 3, &mut RngStream::new(30));
    let data = Dataset::new(data.inputs().clone(), data.targets().clone(), Task::BinaryClassification).unwrap();
    let model = LogisticRegression::new(3);
    let prior = GaussianPrior::isotropic(3, 1.0).unwrap();
    let post = Posterior::new(&model, &prior, &data).unwrap();
    let q0 = prior.to_gaussian(CovRepr::FullCholeskyOfCov).unwrap();
    let mut opt = Mgvb::new(&q0, MgvbConfig::default(), &RngStream::new(5)).unwrap();
    let trace: Vec<f64> = (0..5000).map(|_| opt.step(&post).unwrap().elbo.unwrap()).collect();
    // window means over the final 80 %, allowing for their Monte Carlo error
    let windows: Vec<(f64, f64)> = trace[1000..].chunks(200).map(mean_and_stderr).collect();
    for w in windows.windows(2) {
        let ((m0, s0), (m1, s1)) = (w[0], w[1]);
        assert!(m1 >= m0 - 3.0 * (s0 * s0 + s1 * s1).sqrt(), "window mean fell from {m0} to {m1}");
    }
}
