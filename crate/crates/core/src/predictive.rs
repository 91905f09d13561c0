//! Posterior-predictive summaries by model averaging, and MC dropout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianVariational;
use crate::linalg::{self, Matrix};
use crate::mcmc::Chain;
use crate::models::{Dataset, Head, Mlp, ProbModel};
use crate::optim::Batcher;
use crate::rng::RngStream;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleSource {
    VariationalPosterior,
    McmcChain,
}

/// `N_s × k` parameter draws from a posterior approximation.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSamples<T> {
    draws: Matrix<T>,
    source: SampleSource,
}

impl<T: Real> PosteriorSamples<T> {
    pub fn new(draws: Matrix<T>, source: SampleSource) -> Result<Self> {
        if draws.rows() == 0 {
            return Err(Error::invalid("posterior samples need at least one draw"));
        }
        if !draws.is_finite() {
            return Err(Error::NonFinite("posterior draw".into()));
        }
        Ok(Self { draws, source })
    }

    pub fn from_gaussian(q: &GaussianVariational<T>, n_s: usize, rng: &mut RngStream) -> Result<Self> {
        Self::new(q.sample_reparam(rng, n_s)?, SampleSource::VariationalPosterior)
    }

    /// Post-burn-in draws of a chain.
    pub fn from_chain(chain: &Chain<T>) -> Result<Self> {
        Self::new(chain.post_burn_in(), SampleSource::McmcChain)
    }

    pub fn draws(&self) -> &Matrix<T> {
        &self.draws
    }

    pub fn source(&self) -> SampleSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.draws.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.rows() == 0
    }
}

/// Model-averaged prediction at one input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    pub mean: Vec<f64>,
    /// Row-major `p × p` sample covariance of the network outputs.
    pub covariance: Option<Vec<f64>>,
    /// Averaged class probabilities for classification models.
    pub class_probs: Option<Vec<f64>>,
    pub n_draws: usize,
}

impl PredictiveSummary {
    pub fn covariance_matrix(&self) -> Option<Matrix<f64>> {
        let p = self.mean.len();
        self.covariance.as_ref().map(|c| Matrix::from_vec(p, p, c.clone()).expect("square covariance"))
    }

    /// 1-based index of the most probable class.
    pub fn predicted_class(&self) -> Option<usize> {
        self.class_probs.as_deref().map(argmax_1based)
    }
}

/// 1-based argmax; ties go to the lowest index.
pub fn argmax_1based(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best + 1
}

/// Averages the outputs `f_j` over draws; the covariance is
/// `(1/(N_s−1)) Σ (f_j − ŷ)(f_j − ŷ)ᵀ`.
pub fn summarize_outputs(outputs: &[Vec<f64>], classification: bool, with_covariance: bool) -> Result<PredictiveSummary> {
    let n = outputs.len();
    if n == 0 {
        return Err(Error::invalid("no predictive draws"));
    }
    if with_covariance && n < 2 {
        return Err(Error::invalid("predictive covariance needs at least two draws"));
    }
    let p = outputs[0].len();
    // shifting by the first draw keeps identical draws at exactly zero spread
    let origin = &outputs[0];
    let mut shift = vec![0.0; p];
    for o in outputs {
        if o.len() != p {
            return Err(Error::dim(p, o.len()));
        }
        linalg::axpy(1.0 / n as f64, &linalg::sub(o, origin), &mut shift);
    }
    let mean = linalg::add(origin, &shift);
    let covariance = with_covariance.then(|| {
        let mut c = Matrix::zeros(p, p);
        for o in outputs {
            let e = linalg::sub(&linalg::sub(o, origin), &shift);
            c.add_scaled(1.0 / (n - 1) as f64, &Matrix::outer(&e, &e));
        }
        c.symmetrize().into_vec()
    });
    let class_probs = classification.then(|| {
        let s: f64 = mean.iter().sum();
        mean.iter().map(|v| v / s).collect()
    });
    Ok(PredictiveSummary { mean, covariance, class_probs, n_draws: n })
}

/// Posterior-predictive summary at `x` by averaging `NN_θ(x)` over the draws.
pub fn predictive_summary<T: Real>(
    samples: &PosteriorSamples<T>,
    model: &dyn ProbModel<T>,
    x: &[T],
    with_covariance: bool,
) -> Result<PredictiveSummary> {
    let outputs = (0..samples.len())
        .map(|j| model.predict(samples.draws.row(j), x).map(|o| o.iter().map(|v| v.as_f64()).collect()))
        .collect::<Result<Vec<Vec<f64>>>>()?;
    summarize_outputs(&outputs, model.task().is_classification(), with_covariance)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McDropoutConfig {
    /// Probability of dropping a unit.
    pub p: f64,
    pub weight_decay: f64,
    /// Also drop network inputs, not only hidden-layer inputs.
    pub mask_input: bool,
    pub n_iterations: usize,
    pub learning_rate: f64,
    pub batch_size: Option<usize>,
    pub init_std: f64,
}

impl Default for McDropoutConfig {
    fn default() -> Self {
        Self { p: 0.1, weight_decay: 1e-4, mask_input: false, n_iterations: 2000, learning_rate: 0.01, batch_size: Some(32), init_std: 0.3 }
    }
}

impl McDropoutConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::invalid(format!("dropout rate must lie in (0, 1), got {}", self.p)));
        }
        if !(self.weight_decay >= 0.0) || !(self.learning_rate > 0.0) || !(self.init_std > 0.0) {
            return Err(Error::invalid("weight_decay must be non-negative; learning_rate and init_std positive"));
        }
        Ok(())
    }
}

/// A network trained with dropout, predicting with masks left on.
#[derive(Clone, Debug)]
pub struct McDropout<T> {
    mlp: Mlp<T>,
    theta: Vec<T>,
    p: f64,
    mask_input: bool,
}

impl<T: Real> McDropout<T> {
    pub fn from_params(mlp: Mlp<T>, theta: Vec<T>, p: f64, mask_input: bool) -> Result<Self> {
        crate::error::check_dim(mlp.param_dim(), theta.len())?;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(format!("dropout rate must lie in (0, 1), got {p}")));
        }
        Ok(Self { mlp, theta, p, mask_input })
    }

    pub fn params(&self) -> &[T] {
        &self.theta
    }

    pub fn mlp(&self) -> &Mlp<T> {
        &self.mlp
    }

    pub fn rate(&self) -> f64 {
        self.p
    }

    /// One forward pass without masks.
    pub fn predict_deterministic(&self, x: &[T]) -> Result<Vec<T>> {
        self.mlp.predict_masked(&self.theta, x, None)
    }

    /// Averages `n_passes` stochastic forward passes at `x`.
    pub fn predict(&self, x: &[T], n_passes: usize, rng: &mut RngStream) -> Result<PredictiveSummary> {
        if n_passes < 2 {
            return Err(Error::invalid("MC dropout needs at least two forward passes for a covariance"));
        }
        let outputs = (0..n_passes)
            .map(|_| {
                let masks = self.mlp.sample_masks(self.p, self.mask_input, rng);
                self.mlp.predict_masked(&self.theta, x, Some(&masks)).map(|o| o.iter().map(|v| v.as_f64()).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let classification = !matches!(self.mlp.head(), Head::Gaussian { .. });
        summarize_outputs(&outputs, classification, true)
    }
}

/// Minimizes `(1/M) Σ −log p(y_i|x_i, θ, masks) + λ‖θ‖²` with Adam, drawing
/// fresh masks per row and step. Returns the trained model and the objective trace.
pub fn mc_dropout_train<T: Real>(mlp: Mlp<T>, data: &Dataset<T>, cfg: &McDropoutConfig, rng: &RngStream) -> Result<(McDropout<T>, Vec<f64>)> {
    cfg.validate()?;
    let k = mlp.param_dim();
    mlp.check(&vec![T::zero(); k], data)?;
    let mut init = rng.split("init");
    let mut masks_rng = rng.split("posterior-draws");
    let mut batcher = Batcher::new(cfg.batch_size, rng.split("minibatch-order"));
    let mut theta = mlp.init_params(cfg.init_std, &mut init);
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut m = vec![0.0; k];
    let mut v = vec![0.0; k];
    let lambda = T::lit(cfg.weight_decay);
    let mut trace = Vec::with_capacity(cfg.n_iterations);
    let mut g_row = vec![T::zero(); k];
    for t in 1..=cfg.n_iterations {
        let batch = batcher.next(data);
        let inv = T::from_usize_lossy(batch.len()).recip();
        let mut grad = vec![T::zero(); k];
        let mut loss = T::zero();
        for i in 0..batch.len() {
            let masks = mlp.sample_masks(cfg.p, cfg.mask_input, &mut masks_rng);
            loss -= inv * mlp.row_log_lik_masked(&theta, batch.x(i), batch.y(i), Some(&masks), Some(&mut g_row));
            linalg::axpy(-inv, &g_row, &mut grad);
        }
        loss += lambda * linalg::dot(&theta, &theta);
        linalg::axpy(lambda + lambda, &theta, &mut grad);
        if !loss.is_finite() || !linalg::all_finite(&grad) {
            return Err(Error::NonFinite(format!("MC dropout objective at step {t}")));
        }
        trace.push(loss.as_f64());
        let c1 = 1.0 - b1.powi(t as i32);
        let c2 = 1.0 - b2.powi(t as i32);
        for j in 0..k {
            let g = grad[j].as_f64();
            m[j] = b1 * m[j] + (1.0 - b1) * g;
            v[j] = b2 * v[j] + (1.0 - b2) * g * g;
            theta[j] -= T::lit(cfg.learning_rate * (m[j] / c1) / ((v[j] / c2).sqrt() + eps));
        }
    }
    Ok((McDropout { mlp, theta, p: cfg.p, mask_input: cfg.mask_input }, trace))
}

/// Trains with dropout, then returns one predictive summary per row of `inputs`.
pub fn mc_dropout_train_predict<T: Real>(
    mlp: Mlp<T>,
    cfg: &McDropoutConfig,
    data: &Dataset<T>,
    inputs: &Matrix<T>,
    n_passes: usize,
    rng: &RngStream,
) -> Result<Vec<PredictiveSummary>> {
    if n_passes < 2 {
        return Err(Error::invalid("MC dropout needs at least two forward passes for a covariance"));
    }
    let (net, _) = mc_dropout_train(mlp, data, cfg, rng)?;
    let mut pred_rng = rng.split("predict");
    (0..inputs.rows()).map(|i| net.predict(inputs.row(i), n_passes, &mut pred_rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_is_one_based() {
        assert_eq!(argmax_1based(&[0.2, 0.5, 0.3]), 2);
    }

    #[test]
    fn identical_draws_have_zero_covariance() {
        let outs = vec![vec![1.5, -2.0]; 5];
        let s = summarize_outputs(&outs, false, true).unwrap();
        assert!(s.covariance.unwrap().iter().all(|&c| c == 0.0));
        assert_eq!(s.mean, vec![1.5, -2.0]);
    }

    #[test]
    fn single_draw_covariance_is_an_error() {
        assert!(summarize_outputs(&[vec![1.0]], false, true).is_err());
        assert!(summarize_outputs(&[vec![1.0]], false, false).is_ok());
    }

    #[test]
    fn class_probabilities_sum_to_one() {
        let outs = vec![vec![0.1, 0.9], vec![0.7, 0.3], vec![0.4, 0.6]];
        let s = summarize_outputs(&outs, true, true).unwrap();
        let p = s.class_probs.clone().unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(s.predicted_class(), Some(2));
    }
}
