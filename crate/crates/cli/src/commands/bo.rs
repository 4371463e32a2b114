//! `kpgp bo`: Bayesian optimization of a test function.

use std::path::Path;

use anyhow::Result;
use kpgp_core::{bo_loop, BoState};
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{write_atomic, write_json};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoSummary {
    pub function: &'static str,
    pub dims: usize,
    pub warmup: usize,
    pub budget: usize,
    pub seed: u64,
    pub recommendation: Vec<f64>,
    /// Noise-free objective at the recommendation.
    pub value_at_recommendation: f64,
    pub best_observed: Option<f64>,
    pub failures: usize,
}

pub fn optimize(cfg: &RunConfig) -> Result<BoState> {
    let f = cfg.bo.function;
    let domain = f.bounds(cfg.bo.dims);
    Ok(bo_loop(|x| f.eval(x).map_err(|e| e.to_string()), &domain, &cfg.bo_config()?)?)
}

/// Writes `trace.csv`, `timings.csv` and `summary.json` into `out`.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<()> {
    let state = optimize(cfg)?;
    let d = cfg.bo.dims;
    std::fs::create_dir_all(out)?;
    let header = |prefix: &str| (1..=d).map(|k| format!("{prefix}{k}")).collect::<Vec<_>>().join(",");
    let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
    write_atomic(&out.join("trace.csv"), |w| {
        writeln!(w, "iteration,{},y,acquisition,best_observed,{}", header("x"), header("recommended"))?;
        for r in &state.history {
            let (Some(it), Some(acq), Some(rec)) = (r.iteration, r.acquisition, &r.recommended) else { continue };
            writeln!(w, "{it},{},{},{acq},{},{}", join(&r.x), r.y, r.best_observed, join(rec))?;
        }
        Ok(())
    })?;
    write_atomic(&out.join("timings.csv"), |w| {
        writeln!(w, "iteration,retrain_secs,acquisition_secs")?;
        for (it, t) in state.timings.iter().enumerate() {
            writeln!(w, "{it},{},{}", t.retrain_secs, t.acquisition_secs)?;
        }
        Ok(())
    })?;
    let summary = BoSummary {
        function: cfg.bo.function.name(),
        dims: d,
        warmup: state.warmup,
        budget: state.budget,
        seed: cfg.seed,
        value_at_recommendation: cfg.bo.function.eval(&state.recommendation)?,
        recommendation: state.recommendation,
        best_observed: state.history.last().map(|r| r.best_observed),
        failures: state.failures.len(),
    };
    write_json(&out.join("summary.json"), &summary)
}
