//! Line-delimited JSON run traces.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::StepReport;

/// One iteration of a fit or one draw of a chain.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub t: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elbo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elbo_stderr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted: Option<bool>,
    /// Training objective of methods without an ELBO (MC dropout).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    /// `‖μ‖` or `‖θ‖`.
    pub mean_norm: f64,
    /// `sqrt(tr Σ)` for variational methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_norm: Option<f64>,
    #[serde(default)]
    pub step_halvings: u32,
    #[serde(default)]
    pub rejected: bool,
    #[serde(default)]
    pub draws_dropped: usize,
    #[serde(default)]
    pub safeguard: bool,
}

impl TraceRecord {
    pub fn from_step(t: usize, report: &StepReport, mean_norm: f64, scale_norm: f64) -> Self {
        Self {
            t,
            elbo: report.elbo,
            elbo_stderr: report.elbo_stderr,
            mean_norm,
            scale_norm: Some(scale_norm),
            step_halvings: report.step_halvings,
            rejected: report.rejected,
            draws_dropped: report.draws_dropped,
            safeguard: report.safeguard,
            ..Self::default()
        }
    }
}

/// Appends records, enforcing a strictly increasing iteration index.
pub struct TraceWriter<W: Write> {
    out: W,
    last: Option<usize>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out, last: None }
    }

    pub fn push(&mut self, rec: &TraceRecord) -> Result<()> {
        if self.last.is_some_and(|l| rec.t <= l) {
            return Err(Error::invalid(format!("trace index {} does not follow {:?}", rec.t, self.last)));
        }
        let line = serde_json::to_string(rec).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(self.out, "{line}")?;
        self.last = Some(rec.t);
        Ok(())
    }

    pub fn into_inner(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Parses and validates a trace: every line a record, indices strictly increasing.
pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<TraceRecord>> {
    let mut out: Vec<TraceRecord> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let rec: TraceRecord =
            serde_json::from_str(&line).map_err(|e| Error::Data(format!("trace line {}: {e}", i + 1)))?;
        if let Some(prev) = out.last() {
            if rec.t <= prev.t {
                return Err(Error::Data(format!("trace line {}: index {} after {}", i + 1, rec.t, prev.t)));
            }
        }
        out.push(rec);
    }
    Ok(out)
}
