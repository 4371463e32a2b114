//! `kpgp fit`: train `ω` on a CSV file and save the model with its prediction caches.

use std::path::Path;
use std::time::Instant;

use anyhow::Result;
use kpgp_core::{train, AdditiveGpModel, VarMode};
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{write_json, TrainingData};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GsSummary {
    pub sweeps: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Deterministic summary of a fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub rows: usize,
    /// Distinct input rows after merging duplicates.
    pub n: usize,
    pub d: usize,
    pub nu: f64,
    pub sigma_y: f64,
    pub seed: u64,
    pub exact_logdet: bool,
    pub omega_init: Vec<f64>,
    pub omega: Vec<f64>,
    /// Log-likelihood after every accepted training step.
    pub loglik_trajectory: Vec<f64>,
    pub omega_path: Vec<Vec<f64>>,
    pub iterations: usize,
    pub accepted: usize,
    pub stalled: bool,
    pub failure: Option<String>,
    pub loglik: f64,
    pub loglik_stderr: f64,
    /// `None` when there are too few points for the derivative packets.
    pub loglik_grad: Option<Vec<f64>>,
    pub mean_weights: GsSummary,
    pub var_mode: VarMode,
}

/// Wall time per phase, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct FitTimings {
    pub read: f64,
    pub factorize: f64,
    pub train: f64,
    pub logdet: f64,
    pub trace: f64,
    pub gauss_seidel: f64,
    pub variance_caches: f64,
    pub total: f64,
}

/// Trains and caches a model for `cfg.var_mode`.
pub fn fit(cfg: &RunConfig, data: &TrainingData) -> Result<(AdditiveGpModel, FitReport, FitTimings)> {
    let mut t = FitTimings::default();
    let omega_init = cfg.omegas(&data.widths())?;

    let started = Instant::now();
    let mut model = AdditiveGpModel::assemble(&data.x, &data.y, cfg.nu()?, &omega_init, cfg.sigma_y)?;
    model.gs = cfg.gs;
    t.factorize = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let (mut model, rep) = train(&model, &cfg.train_options())?;
    model.gs = cfg.gs;
    t.train = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let lik = model.log_likelihood(&cfg.logdet_mode())?;
    t.logdet = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let grads = match model.loglik_grad_all(&cfg.trace_mode()) {
        Ok(g) => Some(g.iter().map(|g| g.value).collect()),
        Err(kpgp_core::Error::Size { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    t.trace = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let gs = model.compute_mean_weights()?;
    t.gauss_seidel = started.elapsed().as_secs_f64();
    if !gs.converged {
        eprintln!(
            "warning: Gauss-Seidel stopped after {} sweeps at relative residual {:.1e}; raise gs.max_sweeps",
            gs.sweeps, gs.residual
        );
    }

    let started = Instant::now();
    match cfg.var_mode {
        VarMode::Banded => model.precompute_var_bands()?,
        VarMode::FullM => {
            model.precompute_var_bands()?;
            model.precompute_m()?;
        }
        VarMode::GsPerQuery => {}
    }
    t.variance_caches = started.elapsed().as_secs_f64();

    let report = FitReport {
        rows: data.y.len(),
        n: model.n(),
        d: data.d,
        nu: cfg.nu,
        sigma_y: cfg.sigma_y,
        seed: cfg.seed,
        exact_logdet: cfg.exact_logdet,
        omega_init,
        omega: model.omegas().to_vec(),
        loglik_trajectory: rep.trajectory,
        omega_path: rep.omega_path,
        iterations: rep.iterations,
        accepted: rep.accepted,
        stalled: rep.stalled,
        failure: rep.failure,
        loglik: lik.value,
        loglik_stderr: lik.stderr,
        loglik_grad: grads,
        mean_weights: GsSummary { sweeps: gs.sweeps, residual: gs.residual, converged: gs.converged },
        var_mode: cfg.var_mode,
    };
    Ok((model, report, t))
}

/// Writes `model.bin`, `report.json` and `timings.json` into `out`.
pub fn run(cfg: &RunConfig, data_path: &Path, out: &Path) -> Result<()> {
    let started = Instant::now();
    let data = TrainingData::read(data_path)?;
    let read = started.elapsed().as_secs_f64();
    let (model, report, mut timings) = fit(cfg, &data)?;
    timings.read = read;
    timings.total = started.elapsed().as_secs_f64();
    std::fs::create_dir_all(out)?;
    model.save(&out.join("model.bin"))?;
    write_json(&out.join("report.json"), &report)?;
    write_json(&out.join("timings.json"), &timings)?;
    Ok(())
}
