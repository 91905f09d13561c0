use bayes_nn::gaussian::{ExpectationParams, NaturalParams};
use bayes_nn::linalg::{is_spd, Cholesky, Matrix};
use bayes_nn::{kl_gaussians, CovRepr, GaussianVariational, RngStream};
use proptest::prelude::*;

/// `A Aᵀ + 0.5 I` from a flat `k×k` entry vector.
fn spd(k: usize, entries: &[f64]) -> Matrix<f64> {
    let a = Matrix::from_vec(k, k, entries[..k * k].to_vec()).unwrap();
    let mut s = a.matmul(&a.transpose());
    s.add_scaled(0.5, &Matrix::identity(k));
    s.symmetrize()
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Matrix<f64>)> {
    (1usize..=4).prop_flat_map(|k| {
        (prop::collection::vec(-3.0..3.0f64, k), prop::collection::vec(-1.5..1.5f64, k * k)).prop_map(move |(m, e)| (m, spd(k, &e)))
    })
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #[test]
    fn natural_and_expectation_round_trips((mean, cov) in instance()) {
        let q = GaussianVariational::from_covariance(mean.clone(), &cov).unwrap();
        let from_nat = q.to_natural().to_common().unwrap();
        let from_exp = q.to_expectation().to_common().unwrap();
        for back in [&from_nat, &from_exp] {
            prop_assert!(max_diff(back.mean(), &mean) < 1e-10);
            prop_assert!(back.covariance().sub(&cov).max_abs() < 1e-10 * cov.max_abs().max(1.0));
        }
    }

    #[test]
    fn dual_coordinates_agree_on_covariance((mean, cov) in instance()) {
        let q = GaussianVariational::from_covariance(mean, &cov).unwrap();
        let NaturalParams { lambda2, .. } = q.to_natural();
        let ExpectationParams { m1, m2 } = q.to_expectation();
        // Σ from −½λ₂⁻¹ and from m₂ − m₁m₁ᵀ
        let from_lambda = Cholesky::new(&lambda2.scale(-2.0)).unwrap().inverse();
        let from_m = m2.sub(&Matrix::outer(&m1, &m1));
        prop_assert!(from_lambda.sub(&from_m).max_abs() < 1e-9 * cov.max_abs().max(1.0));
        prop_assert!(is_spd(&lambda2.scale(-1.0)));
        prop_assert!(is_spd(&from_m.symmetrize()));
    }

    #[test]
    fn log_pdf_is_symmetric_and_representation_free((mean, cov) in instance(), shift in prop::collection::vec(-2.0..2.0f64, 4)) {
        let q = GaussianVariational::from_covariance(mean.clone(), &cov).unwrap();
        let k = mean.len();
        let theta: Vec<f64> = mean.iter().zip(&shift).map(|(m, s)| m + s).collect();
        let mirror: Vec<f64> = mean.iter().zip(&shift).map(|(m, s)| m - s).collect();
        let l = q.log_pdf(&theta).unwrap();
        prop_assert!((l - q.log_pdf(&mirror).unwrap()).abs() < 1e-10 * l.abs().max(1.0));
        let by_precision = q.to_repr(CovRepr::FullCholeskyOfPrecision).unwrap();
        prop_assert!((l - by_precision.log_pdf(&theta).unwrap()).abs() < 1e-9 * l.abs().max(1.0));
        prop_assert_eq!(theta.len(), k);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_equal((m1, c1) in instance(), seed in any::<u64>()) {
        let q1 = GaussianVariational::from_covariance(m1.clone(), &c1).unwrap();
        let mut rng = RngStream::new(seed);
        let k = m1.len();
        let m2: Vec<f64> = rng.normal_vec(k);
        let e: Vec<f64> = rng.normal_vec(k * k);
        let q2 = GaussianVariational::from_covariance(m2, &spd(k, &e)).unwrap();
        prop_assert!(kl_gaussians(&q1, &q2).unwrap() >= 0.0);
        prop_assert!(kl_gaussians(&q1, &q1).unwrap() < 1e-10);
    }

    #[test]
    fn sampling_is_deterministic_per_seed((mean, cov) in instance(), seed in any::<u64>()) {
        let q = GaussianVariational::from_covariance(mean, &cov).unwrap();
        let a = q.sample_reparam(&mut RngStream::new(seed).split("posterior-draws"), 8).unwrap();
        let b = q.sample_reparam(&mut RngStream::new(seed).split("posterior-draws"), 8).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn score_wrt_sigma_is_symmetric((mean, cov) in instance(), seed in any::<u64>()) {
        let q = GaussianVariational::from_covariance(mean, &cov).unwrap();
        let theta = q.sample_one(&mut RngStream::new(seed));
        let (_, g) = q.score_gradients(&theta).unwrap();
        prop_assert!(g.asymmetry() < 1e-12 * g.max_abs().max(1.0));
    }
}

#[test]
fn kl_matches_monte_carlo_estimate() {
    // independent oracle: E_q1[log q1 − log q2] from 2·10⁵ draws
    let q1 = GaussianVariational::from_covariance(vec![0.5, -1.0], &Matrix::from_rows(&[vec![1.2, 0.3], vec![0.3, 0.6]])).unwrap();
    let q2 = GaussianVariational::from_covariance(vec![0.0, 0.0], &Matrix::from_rows(&[vec![2.0, -0.4], vec![-0.4, 1.0]])).unwrap();
    let draws = q1.sample_reparam(&mut RngStream::new(5), 200_000).unwrap();
    let terms: Vec<f64> = (0..draws.rows()).map(|i| q1.log_pdf(draws.row(i)).unwrap() - q2.log_pdf(draws.row(i)).unwrap()).collect();
    let n = terms.len() as f64;
    let mean = terms.iter().sum::<f64>() / n;
    let sd = (terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let exact = kl_gaussians(&q1, &q2).unwrap();
    assert!((mean - exact).abs() < 4.0 * sd / n.sqrt(), "MC {mean} vs closed form {exact}");
}

#[test]
fn entropy_matches_closed_form() {
    let cov = Matrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]);
    let q = GaussianVariational::from_covariance(vec![1.0, 2.0], &cov).unwrap();
    let det: f64 = 2.0 * 1.0 - 0.25;
    let expected = 0.5 * (2.0 * (1.0 + (2.0 * std::f64::consts::PI).ln()) + det.ln());
    assert!((q.entropy() - expected).abs() < 1e-12);
}

#[test]
fn tiny_covariance_draws_sit_on_the_mean() {
    let q = GaussianVariational::diagonal(vec![1.0, -2.0], vec![1e-16, 1e-16]).unwrap();
    let draws = q.sample_reparam(&mut RngStream::new(1), 100).unwrap();
    assert!((0..100).all(|i| max_diff(draws.row(i), q.mean()) < 1e-7));
}

#[test]
fn single_precision_round_trip() {
    let q = GaussianVariational::<f32>::from_covariance(vec![2.0], &Matrix::from_rows(&[vec![4.0]])).unwrap();
    let n = q.to_natural();
    assert!((n.lambda1[0] - 0.5).abs() < 1e-6 && (n.lambda2[(0, 0)] + 0.125).abs() < 1e-6);
    let back = n.to_common().unwrap();
    assert!((back.mean()[0] - 2.0).abs() < 1e-5);
}
