//! Posterior-predictive summaries for a fitted run directory.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::config::ExperimentConfig;
use super::fit::{gaussian_from_artifact, read_posterior, read_summary, PosteriorArtifact, CHAIN_FILE, CONFIG_ECHO_FILE};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mcmc::Chain;
use crate::predictive::{predictive_summary, McDropout, PosteriorSamples, PredictiveSummary, SampleSource};
use crate::rng::RngStream;

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";

/// Reads a headered CSV of inputs; columns beyond `input_dim` (targets) are ignored.
pub fn read_inputs(path: &Path, input_dim: usize) -> Result<Matrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut values = Vec::new();
    let mut n = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if record.len() < input_dim {
            return Err(Error::Data(format!("row {} has {} columns, the model takes {input_dim}", line + 2, record.len())));
        }
        for field in record.iter().take(input_dim) {
            values.push(field.parse::<f64>().map_err(|_| Error::Data(format!("row {}: cannot parse {field:?}", line + 2)))?);
        }
        n += 1;
    }
    Matrix::from_vec(n, input_dim, values)
}

/// Keeps at most `n` evenly spaced rows.
fn thin(draws: Matrix<f64>, n: usize) -> Result<Matrix<f64>> {
    let total = draws.rows();
    if total <= n {
        return Ok(draws);
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|j| draws.row(j * total / n).to_vec()).collect();
    Ok(Matrix::from_rows(&rows))
}

/// One summary per input row, using `[predict] n_s` draws from the stored
/// posterior, chain, or dropout network.
pub fn run_predict(run_dir: &Path, inputs: &Path) -> Result<Vec<PredictiveSummary>> {
    let echo = run_dir.join(CONFIG_ECHO_FILE);
    let text = fs::read_to_string(&echo).map_err(|_| Error::MissingArtifact(echo.display().to_string()))?;
    let cfg = ExperimentConfig::parse(&text)?;
    let summary = read_summary(run_dir)?;
    let x = read_inputs(inputs, summary.input_dim)?;
    let model = cfg.build_model(summary.input_dim, summary.target_dim)?;
    let pc = cfg.predict;
    let mut rng = RngStream::new(cfg.seed).split("prediction");

    let out = if cfg.method.is_mcmc() {
        let path = run_dir.join(CHAIN_FILE);
        let text = fs::read_to_string(&path).map_err(|_| Error::MissingArtifact(path.display().to_string()))?;
        let chain = Chain::<f64>::read_text(&text)?;
        let samples = PosteriorSamples::new(thin(chain.post_burn_in(), pc.n_s)?, SampleSource::McmcChain)?;
        (0..x.rows()).map(|i| predictive_summary(&samples, model.as_ref(), x.row(i), pc.covariance)).collect::<Result<Vec<_>>>()?
    } else {
        match read_posterior(run_dir)? {
            PosteriorArtifact::Gaussian { mean, covariance } => {
                let q = gaussian_from_artifact(&mean, &covariance)?;
                let samples = PosteriorSamples::from_gaussian(&q, pc.n_s, &mut rng)?;
                (0..x.rows()).map(|i| predictive_summary(&samples, model.as_ref(), x.row(i), pc.covariance)).collect::<Result<Vec<_>>>()?
            }
            PosteriorArtifact::Dropout { params, rate, mask_input } => {
                let mlp = cfg.build_mlp(summary.input_dim, summary.target_dim)?;
                let net = McDropout::from_params(mlp, params, rate, mask_input)?;
                (0..x.rows()).map(|i| net.predict(x.row(i), pc.n_s, &mut rng)).collect::<Result<Vec<_>>>()?
            }
        }
    };
    Ok(out)
}

/// Writes one JSON summary per line.
pub fn write_predictions(path: &Path, summaries: &[PredictiveSummary]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for s in summaries {
        writeln!(w, "{}", serde_json::to_string(s).map_err(|e| Error::invalid(e.to_string()))?)?;
    }
    w.flush()?;
    Ok(())
}
