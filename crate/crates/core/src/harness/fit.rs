//! Runs a configured method end to end and persists its artifacts.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Generator, Method, ModelKind};
use super::trace::{TraceRecord, TraceWriter};
use crate::blackbox::{Bbb, BbbConfig, BbbState, Bbvi, BbviConfig, FactorizedPosterior, NgBbvi, NgBbviConfig};
use crate::diagnostics::elbo_estimate;
use crate::error::{Error, Result};
use crate::gaussian::{kl_gaussians, GaussianVariational};
use crate::linalg::{self, Matrix};
use crate::manifold::{Emgvb, EmgvbConfig, Mgvb, MgvbConfig};
use crate::mcmc::{effective_sample_size, hmc_sample, mh_sample, Chain, HmcConfig};
use crate::models::{conjugate_posterior, log_evidence, synthetic_linear, synthetic_logistic, Dataset, GaussianPrior, Posterior, ProbModel};
use crate::natgrad::{Ngvi, NgviConfig, NgviState, Qbvi, QbviConfig, Von, VonConfig, VonState, VonVariant};
use crate::optim::{LearningRate, VariationalOptimizer};
use crate::predictive::{mc_dropout_train, McDropoutConfig};
use crate::rng::RngStream;

pub const TRACE_FILE: &str = "trace.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const POSTERIOR_FILE: &str = "posterior.json";
pub const CHAIN_FILE: &str = "chain.txt";
pub const CONFIG_ECHO_FILE: &str = "config.toml";

/// Posterior draws used for the final ELBO estimate.
const FINAL_ELBO_DRAWS: usize = 500;

/// Fitted state persisted for prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PosteriorArtifact {
    Gaussian { mean: Vec<f64>, covariance: Vec<Vec<f64>> },
    Dropout { params: Vec<f64>, rate: f64, mask_input: bool },
}

impl PosteriorArtifact {
    pub fn from_gaussian(q: &GaussianVariational<f64>) -> Self {
        let c = q.covariance();
        PosteriorArtifact::Gaussian { mean: q.mean().to_vec(), covariance: (0..c.rows()).map(|i| c.row(i).to_vec()).collect() }
    }
}

/// Machine-readable outcome of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub seed: u64,
    pub iterations: usize,
    pub stopped_early: bool,
    pub input_dim: usize,
    pub target_dim: usize,
    pub param_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_elbo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_elbo_stderr: Option<f64>,
    /// `KL(q ‖ exact posterior)` when a closed-form posterior exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl_to_oracle: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_evidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accept_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_ess: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
    pub runtime_ms: f64,
}

/// Patience on non-overlapping window means of a noisy objective.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    window: usize,
    patience: usize,
    acc: Vec<f64>,
    best: f64,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(window: usize, patience: usize) -> Self {
        Self { window, patience, acc: Vec::with_capacity(window), best: f64::NEG_INFINITY, stale: 0 }
    }

    /// Feeds one value; returns true once `patience` consecutive windows
    /// failed to beat the best window mean.
    pub fn push(&mut self, v: f64) -> bool {
        if !v.is_finite() {
            return false;
        }
        self.acc.push(v);
        if self.acc.len() < self.window {
            return false;
        }
        let mean = self.acc.iter().sum::<f64>() / self.acc.len() as f64;
        self.acc.clear();
        if mean > self.best {
            self.best = mean;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }
}

/// Loads `[data]` from CSV or generates it from the `"data"` split of the seed.
pub fn load_data(cfg: &ExperimentConfig) -> Result<Dataset<f64>> {
    let task = cfg.task()?;
    match (&cfg.data.path, cfg.data.generate) {
        (Some(p), _) => Dataset::from_csv(&cfg.resolve(p), cfg.data.target_cols, task),
        (None, Some(g)) => {
            let (n, d) = (cfg.data.n.unwrap_or(0), cfg.data.d.unwrap_or(0));
            let mut rng = RngStream::new(cfg.seed).split("data");
            Ok(match g {
                Generator::Linear => synthetic_linear(n, d, cfg.data.noise_var.unwrap_or(1.0), &mut rng).0,
                Generator::Logistic => synthetic_logistic(n, d, &mut rng).0,
            })
        }
        (None, None) => Err(Error::Config("[data] needs path or generate".into())),
    }
}

fn initial_mean(cfg: &ExperimentConfig, model: &dyn ProbModel<f64>, prior: &GaussianPrior<f64>, data: &Dataset<f64>, rng: &RngStream) -> Result<Vec<f64>> {
    if cfg.model.kind == ModelKind::Mlp {
        let mlp = cfg.build_mlp(data.input_dim(), data.target_dim())?;
        return Ok(mlp.init_params(cfg.hyper.init_std.unwrap_or(0.1), &mut rng.split("init")));
    }
    debug_assert_eq!(model.param_dim(), prior.dim());
    Ok(prior.mean().to_vec())
}

fn initial_posterior(cfg: &ExperimentConfig, mean: Vec<f64>, prior: &GaussianPrior<f64>) -> Result<GaussianVariational<f64>> {
    match cfg.hyper.init_var {
        Some(v) => GaussianVariational::diagonal(mean.clone(), vec![v; mean.len()]),
        None => GaussianVariational::from_covariance(mean, &prior.to_gaussian(crate::gaussian::CovRepr::FullCholeskyOfCov)?.covariance()),
    }
}

fn build_optimizer(
    cfg: &ExperimentConfig,
    q0: GaussianVariational<f64>,
    prior: &GaussianPrior<f64>,
    n: usize,
    rng: &RngStream,
) -> Result<Box<dyn VariationalOptimizer<f64>>> {
    let h = &cfg.hyper;
    let lr = |default: LearningRate| match (h.beta, h.kappa) {
        (Some(b), Some(k)) => LearningRate::RobbinsMonro { beta0: b, kappa: k },
        (Some(b), None) => LearningRate::Constant { beta: b },
        (None, Some(k)) => match default {
            LearningRate::Constant { beta } | LearningRate::RobbinsMonro { beta0: beta, .. } => LearningRate::RobbinsMonro { beta0: beta, kappa: k },
        },
        (None, None) => default,
    };
    let log_std = |q: &GaussianVariational<f64>| q.variances().iter().map(|v| 0.5 * v.ln()).collect::<Vec<_>>();
    Ok(match cfg.method {
        Method::Bbb => {
            let d = BbbConfig::default();
            let c = BbbConfig { learning_rate: lr(d.learning_rate), n_s: cfg.n_s, batch_size: h.batch_size };
            let sigma: Vec<f64> = q0.variances().iter().map(|v| v.sqrt()).collect();
            Box::new(Bbb::new(BbbState::from_std(q0.mean().to_vec(), &sigma)?, c, rng)?)
        }
        Method::Bbvi => {
            let d = BbviConfig::default();
            let c = BbviConfig { learning_rate: lr(d.learning_rate), n_s: cfg.n_s };
            Box::new(Bbvi::new(FactorizedPosterior::fully_factorized(q0.mean().to_vec(), log_std(&q0))?, c, rng)?)
        }
        Method::Ngbbvi => {
            let d = NgBbviConfig::default();
            let c = NgBbviConfig {
                beta: h.beta.unwrap_or(d.beta),
                beta1: h.beta1.unwrap_or(d.beta1),
                beta2: h.beta2.unwrap_or(d.beta2),
                adam_eps: h.adam_eps.unwrap_or(d.adam_eps),
                n_s: cfg.n_s,
                control_variate: h.control_variate.unwrap_or(d.control_variate),
            };
            Box::new(NgBbvi::new(FactorizedPosterior::fully_factorized(q0.mean().to_vec(), log_std(&q0))?, c, rng)?)
        }
        Method::Ngvi => {
            let d = NgviConfig::default();
            let c = NgviConfig {
                beta: h.beta.unwrap_or(d.beta),
                n_s: cfg.n_s,
                expectation: h.expectation.unwrap_or(d.expectation),
                mean_update: h.mean_update.unwrap_or(d.mean_update),
                batch_size: h.batch_size,
            };
            Box::new(Ngvi::new(NgviState::from_gaussian(&q0, h.diagonal.unwrap_or(false))?, c, rng)?)
        }
        Method::Von | Method::Vadam | Method::Vogn => {
            let variant = match cfg.method {
                Method::Von => VonVariant::Von,
                Method::Vadam => VonVariant::Vadam,
                _ => VonVariant::Vogn,
            };
            let d = VonConfig::new(variant);
            let c = VonConfig {
                beta: h.beta.unwrap_or(d.beta),
                beta1: h.beta1.unwrap_or(d.beta1),
                beta2: h.beta2.unwrap_or(d.beta2),
                n_s: cfg.n_s,
                batch_size: h.batch_size,
                s_init: h.s_init.unwrap_or(d.s_init),
                expectation: h.expectation.unwrap_or(d.expectation),
                ..d
            };
            Box::new(Von::new(VonState::new(q0.mean().to_vec(), c.s_init, prior, n)?, c, rng)?)
        }
        Method::Qbvi => {
            let d = QbviConfig::default();
            let c = QbviConfig {
                beta: h.beta.unwrap_or(d.beta),
                n_s: cfg.n_s,
                baseline: h.baseline.unwrap_or(d.baseline),
                mean_update: h.mean_update.unwrap_or(d.mean_update),
            };
            Box::new(Qbvi::new(NgviState::from_gaussian(&q0, false)?, c, rng)?)
        }
        Method::Mgvb => {
            let d = MgvbConfig::default();
            let c = MgvbConfig {
                beta: h.beta.unwrap_or(d.beta),
                omega: h.omega.unwrap_or(d.omega),
                n_s: cfg.n_s,
                baseline: h.baseline.unwrap_or(d.baseline),
                exact_factor: h.exact_factor.unwrap_or(d.exact_factor),
                clip: h.clip.unwrap_or(d.clip),
            };
            Box::new(Mgvb::new(&q0, c, rng)?)
        }
        Method::Emgvb => {
            let d = EmgvbConfig::default();
            let c = EmgvbConfig {
                beta: h.beta.unwrap_or(d.beta),
                omega: h.omega.unwrap_or(d.omega),
                n_s: cfg.n_s,
                branch: h.branch.unwrap_or(d.branch),
                baseline: h.baseline.unwrap_or(d.baseline),
                diagonal: h.diagonal.unwrap_or(d.diagonal),
                clip: h.clip.unwrap_or(d.clip),
            };
            Box::new(Emgvb::new(&q0, c, rng)?)
        }
        Method::Mh | Method::Hmc | Method::Mcd => return Err(Error::Config(format!("{} is not a variational optimizer", cfg.method.name()))),
    })
}

fn create_run_dir(out: &Path, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_ECHO_FILE), cfg.to_toml())?;
    Ok(())
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Where a run writes: the explicit override, else `output_dir` from the config.
pub fn run_directory(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<PathBuf> {
    match (out, &cfg.output_dir) {
        (Some(o), _) => Ok(o.to_path_buf()),
        (None, Some(d)) => Ok(cfg.resolve(d)),
        (None, None) => Err(Error::Config("no output directory: set output_dir or pass --out".into())),
    }
}

/// Validates, loads data, runs the configured method and writes the trace,
/// the posterior (or chain), a config echo and `summary.json` into `out`.
pub fn run_fit(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let start = Instant::now();
    let data = load_data(cfg)?;
    if data.is_empty() {
        return Err(Error::Data("dataset has no rows".into()));
    }
    let model = cfg.build_model(data.input_dim(), data.target_dim())?;
    model.check(&vec![0.0; model.param_dim()], &data)?;
    let k = model.param_dim();
    let prior = cfg.build_prior(k)?;
    let root = RngStream::new(cfg.seed);
    create_run_dir(out, cfg)?;
    let mut summary = RunSummary {
        method: cfg.method.name().into(),
        seed: cfg.seed,
        input_dim: data.input_dim(),
        target_dim: data.target_dim(),
        param_dim: k,
        ..Default::default()
    };
    let mut trace = TraceWriter::new(BufWriter::new(File::create(out.join(TRACE_FILE))?));

    match cfg.method {
        Method::Mh | Method::Hmc => {
            let post = Posterior::new(model.as_ref(), &prior, &data)?;
            let init = initial_mean(cfg, model.as_ref(), &prior, &data, &root)?;
            let n = cfg.n_iterations;
            let burn = cfg.hyper.burn_in.unwrap_or(n / 10);
            let mut rng = root.split("posterior-draws");
            let chain = if cfg.method == Method::Mh {
                let std = cfg.hyper.proposal_std.clone().unwrap_or_default();
                let std = if std.len() == 1 { vec![std[0]; k] } else { std };
                mh_sample(&post, &std, &init, n, burn, &mut rng)?
            } else {
                let mut hc = HmcConfig::new(cfg.hyper.step_size.unwrap_or(0.0), cfg.hyper.leapfrog_steps.unwrap_or(0))?;
                hc.adapt_mass = cfg.hyper.adapt_mass.unwrap_or(false);
                hmc_sample(&post, &hc, &init, n, burn, &mut rng)?
            };
            write_chain_trace(&chain, &mut trace)?;
            chain.write_text(BufWriter::new(File::create(out.join(CHAIN_FILE))?), &cfg.to_toml())?;
            summary.iterations = n;
            summary.accept_rate = Some(chain.accept_rate());
            summary.min_ess = effective_sample_size(&chain).ok().map(|e| e.min());
        }
        Method::Mcd => {
            let mlp = cfg.build_mlp(data.input_dim(), data.target_dim())?;
            let d = McDropoutConfig::default();
            let h = &cfg.hyper;
            let mc = McDropoutConfig {
                p: h.dropout.unwrap_or(d.p),
                weight_decay: h.weight_decay.unwrap_or(d.weight_decay),
                mask_input: h.mask_input.unwrap_or(d.mask_input),
                n_iterations: cfg.n_iterations,
                learning_rate: h.beta.unwrap_or(d.learning_rate),
                batch_size: h.batch_size.or(d.batch_size),
                init_std: h.init_std.unwrap_or(d.init_std),
            };
            let (fitted, losses) = mc_dropout_train(mlp, &data, &mc, &root)?;
            for (t, &loss) in losses.iter().enumerate() {
                let rec = TraceRecord { t: t + 1, loss: Some(loss), mean_norm: linalg::norm2(fitted.params()), ..Default::default() };
                trace.push(&rec)?;
            }
            summary.iterations = losses.len();
            summary.final_loss = losses.last().copied();
            let art = PosteriorArtifact::Dropout { params: fitted.params().to_vec(), rate: fitted.rate(), mask_input: mc.mask_input };
            write_json(&out.join(POSTERIOR_FILE), &art)?;
        }
        _ => {
            let post = Posterior::new(model.as_ref(), &prior, &data)?;
            let mean = initial_mean(cfg, model.as_ref(), &prior, &data, &root)?;
            let q0 = initial_posterior(cfg, mean, &prior)?;
            let mut opt = build_optimizer(cfg, q0, &prior, data.len(), &root)?;
            let mut stopper = cfg.stopping.enabled.then(|| EarlyStopper::new(cfg.stopping.window, cfg.stopping.patience));
            for t in 1..=cfg.n_iterations {
                let report = opt.step(&post)?;
                let q = opt.posterior()?;
                let rec = TraceRecord::from_step(t, &report, linalg::norm2(q.mean()), q.variances().iter().sum::<f64>().sqrt());
                trace.push(&rec)?;
                summary.iterations = t;
                if let (Some(s), Some(e)) = (stopper.as_mut(), report.elbo) {
                    if s.push(e) {
                        summary.stopped_early = t < cfg.n_iterations;
                        break;
                    }
                }
            }
            let q = opt.posterior()?;
            let est = elbo_estimate(&q, model.as_ref(), &prior, &data, FINAL_ELBO_DRAWS, &mut root.split("evaluation"))?;
            summary.final_elbo = Some(est.value);
            summary.final_elbo_stderr = Some(est.stderr);
            if cfg.model.kind == ModelKind::Linear {
                let noise = cfg.model.noise_var.unwrap_or(1.0);
                let exact = conjugate_posterior(&prior, &data, noise)?;
                summary.kl_to_oracle = Some(kl_gaussians(&q, &exact)?);
                summary.log_evidence = Some(log_evidence(&prior, &data, noise)?);
            }
            write_json(&out.join(POSTERIOR_FILE), &PosteriorArtifact::from_gaussian(&q))?;
        }
    }
    trace.into_inner()?;
    summary.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

fn write_chain_trace<W: std::io::Write>(chain: &Chain<f64>, trace: &mut TraceWriter<W>) -> Result<()> {
    let draws = chain.draws();
    for t in 0..chain.len() {
        let rec = TraceRecord {
            t: t + 1,
            log_target: Some(chain.log_target()[t]),
            accepted: Some(chain.accepted()[t]),
            mean_norm: linalg::norm2(draws.row(t)),
            ..Default::default()
        };
        trace.push(&rec)?;
    }
    Ok(())
}

/// Reads the fitted Gaussian or dropout artifact of a run directory.
pub fn read_posterior(dir: &Path) -> Result<PosteriorArtifact> {
    let path = dir.join(POSTERIOR_FILE);
    let text = fs::read_to_string(&path).map_err(|_| Error::MissingArtifact(path.display().to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn read_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(|_| Error::MissingArtifact(path.display().to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub(crate) fn gaussian_from_artifact(mean: &[f64], covariance: &[Vec<f64>]) -> Result<GaussianVariational<f64>> {
    if covariance.len() != mean.len() || covariance.iter().any(|r| r.len() != mean.len()) {
        return Err(Error::Data("posterior covariance does not match the mean".into()));
    }
    GaussianVariational::from_covariance(mean.to_vec(), &Matrix::from_rows(covariance))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopper_fires_after_patience_stale_windows() {
        let mut s = EarlyStopper::new(2, 2);
        let fired: Vec<bool> = [1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 1.5, 1.5].iter().map(|&v| s.push(v)).collect();
        assert_eq!(fired, [false, false, false, false, false, false, false, true]);
    }

    #[test]
    fn stopper_ignores_non_finite_values() {
        let mut s = EarlyStopper::new(1, 1);
        assert!(!s.push(f64::NAN));
        assert!(!s.push(1.0));
        assert!(s.push(0.5));
    }
}
