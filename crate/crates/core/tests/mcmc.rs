use bayes_nn::harness::check::sampler_target;
use bayes_nn::mcmc::{effective_sample_size, hmc_sample, leapfrog, mh_sample, mh_sample_with, HmcConfig, Proposal};
use bayes_nn::models::{FnDensity, GradLogDensity};
use bayes_nn::{Chain64, RngStream};
use proptest::prelude::*;

/// Uniform move to one of the two other states of `{0, 1, 2}`.
struct ThreeStateProposal;

impl Proposal<f64> for ThreeStateProposal {
    fn propose(&self, current: &[f64], rng: &mut RngStream) -> Vec<f64> {
        let s = current[0] as usize;
        vec![((s + 1 + rng.index(2)) % 3) as f64]
    }

    fn log_density(&self, _to: &[f64], _from: &[f64]) -> f64 {
        0.0
    }
}

#[test]
fn mh_on_three_states_reaches_the_target() {
    let p = [0.2f64, 0.5, 0.3];
    let target = FnDensity::new(1, move |t: &[f64]| p[t[0] as usize].ln());
    let chain = mh_sample_with(&target, &ThreeStateProposal, &[0.0], 100_000, 1_000, &mut RngStream::new(3)).unwrap();
    let post = chain.post_burn_in();
    let mut freq = [0.0; 3];
    for i in 0..post.rows() {
        freq[post[(i, 0)] as usize] += 1.0 / post.rows() as f64;
    }
    let tv = 0.5 * freq.iter().zip(&p).map(|(f, q)| (f - q).abs()).sum::<f64>();
    assert!(tv < 0.02, "total variation {tv}, frequencies {freq:?}");
}

#[test]
fn hmc_recovers_correlated_gaussian_moments() {
    let (target, mean, cov) = sampler_target().unwrap();
    let cfg = HmcConfig::new(0.1, 20).unwrap();
    let chain = hmc_sample(&target, &cfg, &[0.0, 0.0], 20_000, 2_000, &mut RngStream::new(17)).unwrap();
    let ess = effective_sample_size(&chain).unwrap();
    let m = chain.mean();
    let c = chain.covariance();
    for j in 0..2 {
        let stderr = (cov[(j, j)] / ess.ess[j]).sqrt();
        assert!((m[j] - mean[j]).abs() < 3.0 * stderr, "mean {m:?}");
        for i in 0..2 {
            assert!((c[(i, j)] - cov[(i, j)]).abs() < 0.1 * cov[(i, j)].abs(), "covariance {c:?}");
        }
    }
}

#[test]
fn hmc_acceptance_tends_to_one_as_steps_shrink() {
    let (target, _, _) = sampler_target().unwrap();
    let rate = |eps: f64, l: usize| {
        let chain = hmc_sample(&target, &HmcConfig::new(eps, l).unwrap(), &[0.0, 0.0], 2_000, 200, &mut RngStream::new(8)).unwrap();
        chain.accept_rate()
    };
    let (coarse, fine, finest) = (rate(0.4, 3), rate(0.1, 12), rate(0.01, 120));
    assert!(coarse <= fine && fine <= finest && finest > 0.995, "{coarse} {fine} {finest}");
}

#[test]
fn accept_rate_matches_flags() {
    let (target, _, _) = sampler_target().unwrap();
    let chain = mh_sample(&target, &[1.0, 1.0], &[0.0, 0.0], 5_000, 500, &mut RngStream::new(2)).unwrap();
    let flags = chain.accepted().iter().filter(|&&a| a).count() as f64 / chain.len() as f64;
    assert!((chain.accept_rate() - flags).abs() < 1e-12);
}

#[test]
fn chains_are_bit_reproducible() {
    let (target, _, _) = sampler_target().unwrap();
    let run = || hmc_sample(&target, &HmcConfig::new(0.2, 5).unwrap(), &[1.0, 0.0], 500, 50, &mut RngStream::new(99).split("posterior-draws")).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.draws(), b.draws());
    let mut ta = Vec::new();
    a.write_text(&mut ta, "seed = 99").unwrap();
    let back = Chain64::read_text(std::str::from_utf8(&ta).unwrap()).unwrap();
    assert_eq!(back.draws(), a.draws());
    assert_eq!(back.burn_in(), a.burn_in());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn leapfrog_is_reversible(x in prop::collection::vec(-3.0..3.0f64, 2), r in prop::collection::vec(-2.0..2.0f64, 2), eps in 0.01..0.3f64, l in 1usize..30) {
        let (target, _, _) = sampler_target().unwrap();
        let cfg = HmcConfig::new(eps, l).unwrap();
        let (_, g) = target.log_density_and_grad(&x).unwrap();
        let gv: Vec<f64> = g.iter().map(|v| -v).collect();
        let fwd = leapfrog(&target, &x, &r, &gv, &cfg);
        let flipped: Vec<f64> = fwd.rho.iter().map(|v| -v).collect();
        let back = leapfrog(&target, &fwd.theta, &flipped, &fwd.grad_potential, &cfg);
        for (a, b) in back.theta.iter().zip(&x) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in back.rho.iter().zip(&r) {
            prop_assert!((a + b).abs() < 1e-10);
        }
    }

    #[test]
    fn ess_is_positive_and_bounded(seed in any::<u64>(), std in 0.05..3.0f64) {
        let (target, _, _) = sampler_target().unwrap();
        let chain = mh_sample(&target, &[std, std], &[0.0, 0.0], 1_200, 200, &mut RngStream::new(seed)).unwrap();
        let ess = effective_sample_size(&chain).unwrap();
        for e in ess.ess {
            prop_assert!(e > 0.0 && e <= 1_000.0 + 1e-9);
        }
    }

    #[test]
    fn mh_chain_is_seed_deterministic(seed in any::<u64>()) {
        let (target, _, _) = sampler_target().unwrap();
        let run = || mh_sample(&target, &[0.8, 0.8], &[0.0, 0.0], 300, 30, &mut RngStream::new(seed)).unwrap();
        let (a, b) = (run(), run());
        prop_assert_eq!(a.draws(), b.draws());
    }
}
