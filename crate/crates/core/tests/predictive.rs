use std::f64::consts::PI;

use bayes_nn::diagnostics::{elbo_estimate, ElboEstimate};
use bayes_nn::harness::config::ExperimentConfig;
use bayes_nn::harness::trace::{read_trace, TraceRecord, TraceWriter};
use bayes_nn::linalg::{is_spd, Cholesky, Matrix};
use bayes_nn::models::{conjugate_posterior, synthetic_linear, Activation, Head, LinearRegression, Mlp};
use bayes_nn::predictive::{predictive_summary, summarize_outputs, McDropout, PosteriorSamples, SampleSource};
use bayes_nn::{Error, GaussianPrior, GaussianVariational, ProbModel, RngStream};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn predictive_covariance_is_symmetric_psd(p in 1usize..5, n in 2usize..40, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed);
        let outputs: Vec<Vec<f64>> = (0..n).map(|_| rng.normal_vec(p)).collect();
        let s = summarize_outputs(&outputs, false, true).unwrap();
        let mut c = s.covariance_matrix().unwrap();
        prop_assert!(c.asymmetry() == 0.0);
        c.add_scaled(1e-10, &Matrix::identity(p));
        prop_assert!(is_spd(&c));
        prop_assert!(s.class_probs.is_none());
    }

    #[test]
    fn identical_draws_have_no_spread(v in prop::collection::vec(-1e6..1e6f64, 1..5), n in 2usize..20) {
        let s = summarize_outputs(&vec![v.clone(); n], false, true).unwrap();
        prop_assert_eq!(&s.mean, &v);
        prop_assert!(s.covariance.unwrap().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn class_probabilities_sum_to_one(raw in prop::collection::vec(prop::collection::vec(0.01..1.0f64, 4), 1..30)) {
        let outputs: Vec<Vec<f64>> = raw.iter().map(|r| { let s: f64 = r.iter().sum(); r.iter().map(|v| v / s).collect() }).collect();
        let s = summarize_outputs(&outputs, true, false).unwrap();
        let probs = s.class_probs.as_ref().unwrap();
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let k = s.predicted_class().unwrap();
        prop_assert!((1..=4).contains(&k) && probs.iter().all(|&p| p <= probs[k - 1]));
    }

    #[test]
    fn traces_round_trip(
        rows in prop::collection::vec((1usize..5, prop::option::of(-1e3..1e3f64), prop::option::of(any::<bool>()), 0.0..10.0f64, 0u32..4), 1..30)
    ) {
        let mut t = 0;
        let recs: Vec<TraceRecord> = rows
            .into_iter()
            .map(|(dt, elbo, accepted, mean_norm, step_halvings)| {
                t += dt;
                TraceRecord { t, elbo, accepted, mean_norm, step_halvings, ..TraceRecord::default() }
            })
            .collect();
        let mut w = TraceWriter::new(Vec::new());
        for r in &recs {
            w.push(r).unwrap();
        }
        let bytes = w.into_inner().unwrap();
        prop_assert_eq!(read_trace(bytes.as_slice()).unwrap(), recs);
    }
}

#[test]
fn trace_rejects_repeated_indices() {
    let mut w = TraceWriter::new(Vec::new());
    w.push(&TraceRecord { t: 2, ..TraceRecord::default() }).unwrap();
    assert!(w.push(&TraceRecord { t: 2, ..TraceRecord::default() }).is_err());
    let text = "{\"t\":3,\"mean_norm\":0.0}\n{\"t\":1,\"mean_norm\":0.0}\n";
    assert!(matches!(read_trace(text.as_bytes()), Err(Error::Data(_))));
}

#[test]
fn linear_predictive_matches_closed_form() {
    // for a linear model the predictive output xᵀθ is N(xᵀμ, xᵀΣx)
    let cov = Matrix::from_rows(&[vec![0.5, 0.1, 0.0], vec![0.1, 0.3, -0.05], vec![0.0, -0.05, 0.2]]);
    let q = GaussianVariational::from_covariance(vec![1.0, -0.5, 0.25], &cov).unwrap();
    let model = LinearRegression::new(3, 1.0).unwrap();
    let samples = PosteriorSamples::from_gaussian(&q, 20_000, &mut RngStream::new(12)).unwrap();
    assert_eq!(samples.source(), SampleSource::VariationalPosterior);
    let x = [0.7, 1.2, -0.4];
    let s = predictive_summary(&samples, &model, &x, true).unwrap();
    let mean = 0.7 - 0.6 - 0.1;
    let var: f64 = cov.bilinear(&x, &x);
    assert!((s.mean[0] - mean).abs() < 3.0 * (var / 20_000.0).sqrt(), "mean {}", s.mean[0]);
    assert!((s.covariance.unwrap()[0] - var).abs() < 0.05 * var);
}

#[test]
fn softmax_predictive_is_a_distribution() {
    let mlp = Mlp::new(vec![2, 5, 3], Activation::Tanh, Head::Softmax).unwrap();
    let q = GaussianVariational::diagonal(vec![0.1; mlp.param_dim()], vec![0.5; mlp.param_dim()]).unwrap();
    let samples = PosteriorSamples::from_gaussian(&q, 200, &mut RngStream::new(3)).unwrap();
    let s = predictive_summary(&samples, &mlp, &[0.4, -1.0], false).unwrap();
    let probs = s.class_probs.unwrap();
    assert_eq!(probs.len(), 3);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12 && probs.iter().all(|&p| p > 0.0));
}

#[test]
fn mc_dropout_passes_are_seeded_and_spread() {
    let mlp = Mlp::new(vec![2, 8, 1], Activation::Relu, Head::Gaussian { noise_var: 1.0 }).unwrap();
    let theta = RngStream::new(1).normal_vec::<f64>(mlp.param_dim());
    let net = McDropout::from_params(mlp, theta, 0.3, false).unwrap();
    let a = net.predict(&[0.5, 1.5], 100, &mut RngStream::new(5)).unwrap();
    let b = net.predict(&[0.5, 1.5], 100, &mut RngStream::new(5)).unwrap();
    assert_eq!(a, b);
    assert!(a.covariance.unwrap()[0] > 0.0);
    assert!(McDropout::from_params(Mlp::new(vec![1, 2, 1], Activation::Relu, Head::<f64>::Bernoulli).unwrap(), vec![0.0; 7], 1.0, false).is_err());
}

#[test]
fn elbo_at_exact_posterior_is_the_log_evidence() {
    // log p(D, θ) − log q(θ) = log p(D) for every θ once q is the posterior;
    // the evidence is N(y; 0, σ²I + X Σ₀ Xᵀ)
    let (data, _) = synthetic_linear::<f64>(12, 2, 0.6, &mut RngStream::new(8));
    let model = LinearRegression::new(2, 0.6).unwrap();
    let prior = GaussianPrior::isotropic(2, 1.5).unwrap();
    let post = conjugate_posterior(&prior, &data, 0.6).unwrap();
    let est = elbo_estimate(&post, &model, &prior, &data, 64, &mut RngStream::new(2)).unwrap();

    let x = data.inputs();
    let mut k = x.matmul(&x.transpose()).scale(1.0 / 1.5);
    k.add_scaled(0.6, &Matrix::identity(12));
    let chol = Cholesky::new(&k).unwrap();
    let y = data.targets().col(0);
    let quad: f64 = y.iter().zip(chol.solve(&y)).map(|(a, b)| a * b).sum();
    let evidence = -0.5 * (12.0 * (2.0 * PI).ln() + chol.log_det() + quad);

    assert!((est.value - evidence).abs() < 1e-9, "{} vs {evidence}", est.value);
    assert!(est.stderr < 1e-9);
}

#[test]
fn elbo_terms_skip_non_finite_draws() {
    let e = ElboEstimate::from_terms(&[1.0, f64::NAN, 3.0, f64::NEG_INFINITY]).unwrap();
    assert_eq!((e.value, e.dropped), (2.0, 2));
    assert!((e.stderr - 1.0).abs() < 1e-12);
    assert!(ElboEstimate::from_terms(&[f64::NAN]).is_err());
}

#[test]
fn configs_round_trip_and_reject_unknown_keys() {
    let text = "seed = 4\nmethod = \"vogn\"\nn_iterations = 10\n\n[data]\ngenerate = \"logistic\"\nn = 30\nd = 2\ntask = \"binary\"\n\n[model]\nkind = \"logistic\"\n";
    let cfg = ExperimentConfig::parse(text).unwrap();
    assert_eq!(ExperimentConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    assert!(matches!(ExperimentConfig::parse(&format!("typo = 1\n{text}")), Err(Error::Config(_))));
    let zero = text.replace("n_iterations = 10", "n_iterations = 0");
    assert!(matches!(ExperimentConfig::parse(&zero), Err(Error::Config(_))));
}
