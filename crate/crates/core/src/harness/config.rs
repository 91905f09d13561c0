//! TOML experiment configuration: top-level run keys plus one table per
//! component (`[data]`, `[model]`, `[prior]`, `[hyper]`, `[stopping]`,
//! `[predict]`). Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::manifold::EmgvbBranch;
use crate::models::{Activation, GaussianPrior, Head, LinearRegression, LogisticRegression, Mlp, ProbModel, Task};
use crate::natgrad::{Expectation, MeanUpdate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mh,
    Hmc,
    Mcd,
    Bbb,
    Bbvi,
    Ngbbvi,
    Ngvi,
    Von,
    Vadam,
    Vogn,
    Qbvi,
    Mgvb,
    Emgvb,
}

impl Method {
    pub fn is_mcmc(self) -> bool {
        matches!(self, Method::Mh | Method::Hmc)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Mh => "mh",
            Method::Hmc => "hmc",
            Method::Mcd => "mcd",
            Method::Bbb => "bbb",
            Method::Bbvi => "bbvi",
            Method::Ngbbvi => "ngbbvi",
            Method::Ngvi => "ngvi",
            Method::Von => "von",
            Method::Vadam => "vadam",
            Method::Vogn => "vogn",
            Method::Qbvi => "qbvi",
            Method::Mgvb => "mgvb",
            Method::Emgvb => "emgvb",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Regression,
    Binary,
    Multiclass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    /// `y = xᵀθ* + ε` with standard-normal inputs.
    Linear,
    /// Bernoulli labels from a logistic model.
    Logistic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// CSV file, relative to the config file's directory.
    pub path: Option<PathBuf>,
    pub generate: Option<Generator>,
    #[serde(default = "default_task")]
    pub task: TaskKind,
    pub classes: Option<usize>,
    #[serde(default = "one")]
    pub target_cols: usize,
    /// Rows and input dimension for generated data.
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub noise_var: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Logistic,
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub noise_var: Option<f64>,
    /// Hidden-layer widths of an MLP.
    #[serde(default)]
    pub hidden: Vec<usize>,
    /// Outputs of an MLP; defaults to the target width or the class count.
    pub outputs: Option<usize>,
    pub activation: Option<Activation>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    /// Isotropic precision `τ`.
    pub tau: Option<f64>,
    pub mean: Option<Vec<f64>>,
    /// Full prior covariance, row by row; overrides `tau`.
    pub covariance: Option<Vec<Vec<f64>>>,
}

/// Method hyperparameters; each method reads the keys it understands and
/// rejects the rest.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperConfig {
    pub beta: Option<f64>,
    pub kappa: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub omega: Option<f64>,
    pub batch_size: Option<usize>,
    pub expectation: Option<Expectation>,
    pub mean_update: Option<MeanUpdate>,
    pub baseline: Option<bool>,
    pub exact_factor: Option<bool>,
    pub clip: Option<f64>,
    pub branch: Option<EmgvbBranch>,
    pub diagonal: Option<bool>,
    pub control_variate: Option<bool>,
    pub s_init: Option<f64>,
    pub step_size: Option<f64>,
    pub leapfrog_steps: Option<usize>,
    pub adapt_mass: Option<bool>,
    pub proposal_std: Option<Vec<f64>>,
    pub burn_in: Option<usize>,
    pub dropout: Option<f64>,
    pub weight_decay: Option<f64>,
    pub mask_input: Option<bool>,
    /// Standard deviation of the random initial MLP weights.
    pub init_std: Option<f64>,
    /// Initial variational variance; defaults to the prior's.
    pub init_var: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoppingConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
}

impl Default for StoppingConfig {
    fn default() -> Self {
        Self { enabled: true, window: default_window(), patience: default_patience() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    #[serde(default = "default_predict_draws")]
    pub n_s: usize,
    #[serde(default = "yes")]
    pub covariance: bool,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self { n_s: default_predict_draws(), covariance: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub method: Method,
    pub n_iterations: usize,
    #[serde(default = "default_n_s")]
    pub n_s: usize,
    pub output_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub hyper: HyperConfig,
    #[serde(default)]
    pub stopping: StoppingConfig,
    #[serde(default)]
    pub predict: PredictConfig,
    /// Directory relative paths resolve against; set by [`ExperimentConfig::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_task() -> TaskKind {
    TaskKind::Regression
}
fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_window() -> usize {
    200
}
fn default_patience() -> usize {
    10
}
fn default_predict_draws() -> usize {
    200
}
fn default_n_s() -> usize {
    16
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn task(&self) -> Result<Task> {
        Ok(match self.data.task {
            TaskKind::Regression => Task::Regression,
            TaskKind::Binary => Task::BinaryClassification,
            TaskKind::Multiclass => match self.data.classes {
                Some(c) if c >= 2 => Task::Multiclass { classes: c },
                _ => return Err(config_err("multiclass data needs classes >= 2")),
            },
        })
    }

    /// Every structural and method-specific requirement, checked before any compute.
    pub fn validate(&self) -> Result<()> {
        if self.n_iterations == 0 {
            return Err(config_err("n_iterations must be positive"));
        }
        if self.n_s == 0 {
            return Err(config_err("n_s must be positive"));
        }
        match (&self.data.path, &self.data.generate) {
            (Some(_), Some(_)) => return Err(config_err("[data] takes either path or generate, not both")),
            (None, None) => return Err(config_err("[data] needs path or generate")),
            (None, Some(_)) if self.data.n.is_none() || self.data.d.is_none() => {
                return Err(config_err("generated data needs n and d"));
            }
            _ => {}
        }
        let task = self.task()?;
        match (self.model.kind, task) {
            (ModelKind::Linear, Task::Regression) | (ModelKind::Logistic, Task::BinaryClassification) | (ModelKind::Mlp, _) => {}
            (kind, task) => return Err(config_err(format!("model {kind:?} cannot fit a {task:?} dataset"))),
        }
        if self.model.kind == ModelKind::Mlp && self.model.hidden.is_empty() {
            return Err(config_err("an mlp needs at least one hidden layer"));
        }
        if let Some(tau) = self.prior.tau {
            if !(tau > 0.0) {
                return Err(config_err("prior tau must be positive"));
            }
        }
        if self.stopping.window == 0 || self.stopping.patience == 0 {
            return Err(config_err("stopping window and patience must be positive"));
        }
        self.validate_hyper()
    }

    fn validate_hyper(&self) -> Result<()> {
        let h = &self.hyper;
        let m = self.method;
        let allowed: &[&str] = match m {
            Method::Mh => &["proposal_std", "burn_in", "init_std"],
            Method::Hmc => &["step_size", "leapfrog_steps", "adapt_mass", "burn_in", "init_std"],
            Method::Mcd => &["beta", "dropout", "weight_decay", "mask_input", "batch_size", "init_std"],
            Method::Bbb => &["beta", "kappa", "batch_size", "init_std", "init_var"],
            Method::Bbvi => &["beta", "kappa", "init_std", "init_var"],
            Method::Ngbbvi => &["beta", "beta1", "beta2", "adam_eps", "control_variate", "init_std", "init_var"],
            Method::Ngvi => &["beta", "expectation", "mean_update", "batch_size", "diagonal", "init_std", "init_var"],
            Method::Von => &["beta", "batch_size", "s_init", "expectation", "init_std"],
            Method::Vadam | Method::Vogn => &["beta", "beta1", "beta2", "batch_size", "s_init", "init_std"],
            Method::Qbvi => &["beta", "baseline", "mean_update", "init_std", "init_var"],
            Method::Mgvb => &["beta", "omega", "baseline", "exact_factor", "clip", "init_std", "init_var"],
            Method::Emgvb => &["beta", "omega", "baseline", "branch", "diagonal", "clip", "init_std", "init_var"],
        };
        let given = toml::Value::try_from(h).map_err(|e| config_err(e.to_string()))?;
        if let toml::Value::Table(t) = given {
            for key in t.keys() {
                if !allowed.contains(&key.as_str()) {
                    return Err(config_err(format!("hyperparameter {key} does not apply to method {}", m.name())));
                }
            }
        }
        match m {
            Method::Mh => {
                let std = h.proposal_std.as_ref().ok_or_else(|| config_err("mh requires hyper.proposal_std"))?;
                if std.is_empty() || std.iter().any(|s| !(*s > 0.0)) {
                    return Err(config_err("proposal_std entries must be positive"));
                }
            }
            Method::Hmc => {
                let eps = h.step_size.ok_or_else(|| config_err("hmc requires hyper.step_size"))?;
                let l = h.leapfrog_steps.ok_or_else(|| config_err("hmc requires hyper.leapfrog_steps"))?;
                if !(eps > 0.0) || l == 0 {
                    return Err(config_err("hmc step_size and leapfrog_steps must be positive"));
                }
            }
            Method::Mcd => {
                if self.model.kind != ModelKind::Mlp {
                    return Err(config_err("mc dropout needs an mlp model"));
                }
                let p = h.dropout.ok_or_else(|| config_err("mcd requires hyper.dropout"))?;
                if !(p > 0.0 && p < 1.0) {
                    return Err(config_err("dropout must lie in (0, 1)"));
                }
            }
            Method::Von | Method::Vadam | Method::Vogn
                if self.prior.covariance.is_some() => {
                    return Err(config_err("the VON family needs a diagonal prior"));
                }
            _ => {}
        }
        if let Some(b) = h.beta {
            if !(b > 0.0) {
                return Err(config_err("beta must be positive"));
            }
        }
        if matches!(h.batch_size, Some(0)) {
            return Err(config_err("batch_size must be positive"));
        }
        if let Some(v) = h.init_var {
            if !(v > 0.0) {
                return Err(config_err("init_var must be positive"));
            }
        }
        Ok(())
    }

    /// The likelihood named by `[model]` for inputs of width `input_dim`.
    pub fn build_model(&self, input_dim: usize, target_dim: usize) -> Result<Box<dyn ProbModel<f64>>> {
        let mc = &self.model;
        Ok(match mc.kind {
            ModelKind::Linear => Box::new(LinearRegression::new(input_dim, mc.noise_var.unwrap_or(1.0))?),
            ModelKind::Logistic => Box::new(LogisticRegression::new(input_dim)),
            ModelKind::Mlp => Box::new(self.build_mlp(input_dim, target_dim)?),
        })
    }

    pub fn build_mlp(&self, input_dim: usize, target_dim: usize) -> Result<Mlp<f64>> {
        let mc = &self.model;
        let task = self.task()?;
        let (head, default_out) = match task {
            Task::Regression => (Head::Gaussian { noise_var: mc.noise_var.unwrap_or(1.0) }, target_dim),
            Task::BinaryClassification => (Head::Bernoulli, 1),
            Task::Multiclass { classes } => (Head::Softmax, classes),
        };
        let mut sizes = vec![input_dim];
        sizes.extend(&mc.hidden);
        sizes.push(mc.outputs.unwrap_or(default_out));
        Mlp::new(sizes, mc.activation.unwrap_or(Activation::Tanh), head)
    }

    pub fn build_prior(&self, k: usize) -> Result<GaussianPrior<f64>> {
        let p = &self.prior;
        let mean = p.mean.clone().unwrap_or_else(|| vec![0.0; k]);
        if mean.len() != k {
            return Err(config_err(format!("prior mean has {} entries, model has {k} parameters", mean.len())));
        }
        match &p.covariance {
            Some(rows) => {
                if rows.len() != k || rows.iter().any(|r| r.len() != k) {
                    return Err(config_err(format!("prior covariance must be {k}x{k}")));
                }
                let cov = Matrix::from_rows(rows);
                let precision = crate::linalg::Cholesky::new(&cov)
                    .map_err(|_| config_err("prior covariance is not positive definite"))?
                    .inverse()
                    .symmetrize();
                GaussianPrior::full(mean, &precision)
            }
            None => GaussianPrior::with_mean(mean, p.tau.unwrap_or(1.0)),
        }
    }
}
