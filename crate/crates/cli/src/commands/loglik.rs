//! `kpgp loglik`: log-likelihood and its `ω` gradient for a saved model, printed as JSON.

use std::io::Write;
use std::path::Path;

use anyhow::Result;
use kpgp_core::AdditiveGpModel;
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoglikReport {
    pub loglik: f64,
    pub quad: f64,
    pub logdet: f64,
    pub stderr: f64,
    pub gradient: Vec<f64>,
    pub gradient_stderr: Vec<f64>,
}

pub fn evaluate(cfg: &RunConfig, model: &AdditiveGpModel) -> Result<LoglikReport> {
    let lik = model.log_likelihood(&cfg.logdet_mode())?;
    let grads = model.loglik_grad_all(&cfg.trace_mode())?;
    Ok(LoglikReport {
        loglik: lik.value,
        quad: lik.quad,
        logdet: lik.logdet,
        stderr: lik.stderr,
        gradient: grads.iter().map(|g| g.value).collect(),
        gradient_stderr: grads.iter().map(|g| g.stderr).collect(),
    })
}

pub fn run(cfg: &RunConfig, model_path: &Path) -> Result<()> {
    let mut model = AdditiveGpModel::load(model_path)?;
    model.gs = cfg.gs;
    let report = evaluate(cfg, &model)?;
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, &report)?;
    writeln!(stdout)?;
    Ok(())
}
