//! `kpgp predict`: posterior mean and variance at the points of a CSV file.

use std::path::Path;

use anyhow::Result;
use kpgp_core::{AdditiveGpModel, QueryHint, VarMode};

use crate::config::RunConfig;
use crate::data::{for_each_row, write_atomic, Layout};

/// Builds whatever caches `mode` needs that the saved model lacks.
pub fn prepare(model: &mut AdditiveGpModel, mode: VarMode) -> Result<()> {
    if model.cache.b_y.is_none() {
        model.compute_mean_weights()?;
    }
    if matches!(mode, VarMode::Banded | VarMode::FullM) && model.cache.var_bands.is_none() {
        model.precompute_var_bands()?;
    }
    if mode == VarMode::FullM && model.cache.m_dense.is_none() {
        model.precompute_m()?;
    }
    Ok(())
}

/// Streams `mean,var` rows for every point into `out`.
pub fn run(cfg: &RunConfig, model_path: &Path, points: &Path, out: &Path) -> Result<()> {
    let mut model = AdditiveGpModel::load(model_path)?;
    model.gs = cfg.gs;
    prepare(&mut model, cfg.var_mode)?;
    let d = model.d_dims();
    let mut hint = QueryHint::new(d, 2 * model.nu().q() + 3);
    write_atomic(out, |w| {
        writeln!(w, "mean,var")?;
        for_each_row(points, Layout::Points(d), |_, x| {
            let mean = model.predict_mean_hinted(x, &mut hint)?;
            let var = model.predict_var_hinted(x, cfg.var_mode, &mut hint)?;
            writeln!(w, "{mean},{var}")?;
            Ok(())
        })?;
        Ok(())
    })
}
