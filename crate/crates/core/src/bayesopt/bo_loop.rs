//! Outer Bayesian-optimization loop.

use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::acquisition::{AcquisitionSpec, ModelAcquisition};
use super::search::{multi_ascend, SearchConfig};
use crate::error::{Error, Result};
use crate::estimators::stream_rng;
use crate::gp::{train, AdditiveGpModel, LogdetMode, TraceMode, TrainOptions};
use crate::matern::HalfIntegerSmoothness;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoConfig {
    pub nu: f64,
    /// Noise level of the model, in units of the standardized responses.
    pub sigma_y: f64,
    /// Initial `ω` per dimension; `None` uses `10 / width`.
    pub omega_init: Option<Vec<f64>>,
    pub warmup: usize,
    pub budget: usize,
    /// Retrain `ω` every this many iterations; `0` never retrains.
    pub retrain_every: usize,
    pub train: TrainOptions,
    /// Use the exact log-determinant and trace while `D·n` stays at or below this.
    pub exact_below: usize,
    pub acquisition: AcquisitionSpec,
    /// Bounds are taken from the domain passed to [`bo_loop`].
    pub search: SearchConfig,
    /// Best observed points added to the random ascent starts.
    pub history_starts: usize,
    /// Coordinates within this fraction of the box width of an observed value are snapped to it.
    pub snap_rel: f64,
    /// Standard deviation of the Gaussian noise added to each evaluation.
    pub noise_sd: f64,
    /// Minimize the objective instead of maximizing it.
    pub minimize: bool,
    pub seed: u64,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            nu: 0.5,
            sigma_y: 0.05,
            omega_init: None,
            warmup: 50,
            budget: 100,
            retrain_every: 25,
            train: TrainOptions { max_iters: 10, ..Default::default() },
            exact_below: 2000,
            acquisition: AcquisitionSpec::default(),
            search: SearchConfig::default(),
            history_starts: 4,
            snap_rel: 1e-3,
            noise_sd: 0.0,
            minimize: false,
            seed: 0,
        }
    }
}

/// One evaluated point, in objective units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoRecord {
    /// `None` for warmup samples.
    pub iteration: Option<usize>,
    pub x: Vec<f64>,
    pub y: f64,
    /// Acquisition value at `x`; `None` for warmup samples.
    pub acquisition: Option<f64>,
    /// Running best observed value (largest, or smallest when minimizing).
    pub best_observed: f64,
    /// Maximizer of the posterior mean over the history before this evaluation.
    pub recommended: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IterationTiming {
    pub retrain_secs: f64,
    pub acquisition_secs: f64,
}

#[derive(Debug, Clone)]
pub struct BoState {
    pub model: AdditiveGpModel,
    pub history: Vec<BoRecord>,
    pub timings: Vec<IterationTiming>,
    /// Points where the objective failed, with the reported reason.
    pub failures: Vec<(Vec<f64>, String)>,
    pub iterations: usize,
    pub budget: usize,
    pub warmup: usize,
    /// Maximizer of the final posterior mean over the history.
    pub recommendation: Vec<f64>,
}

struct Observations {
    xs: Vec<Vec<f64>>,
    /// Responses to be maximized.
    ys: Vec<f64>,
}

impl Observations {
    fn fit(&self, nu: HalfIntegerSmoothness, omegas: &[f64], sigma_y: f64) -> Result<AdditiveGpModel> {
        let n = self.ys.len() as f64;
        let mean = self.ys.iter().sum::<f64>() / n;
        let var = self.ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        let y: Vec<f64> = self.ys.iter().map(|v| (v - mean) / sd).collect();
        let x: Vec<f64> = self.xs.iter().flatten().copied().collect();
        AdditiveGpModel::assemble(&x, &y, nu, omegas, sigma_y)
    }

    fn posterior_argmax(&self, model: &AdditiveGpModel) -> Result<Vec<f64>> {
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, x) in self.xs.iter().enumerate() {
            let m = model.predict_mean(x)?;
            if m > best.0 {
                best = (m, i);
            }
        }
        Ok(self.xs[best.1].clone())
    }
}

fn snap(x: &mut [f64], model: &AdditiveGpModel, bounds: &[(f64, f64)], rel: f64) {
    for (d, v) in x.iter_mut().enumerate() {
        let tol = rel * (bounds[d].1 - bounds[d].0);
        let values = model.dim(d).axis().values();
        let j = values.partition_point(|u| *u < *v);
        let nearest = [j.wrapping_sub(1), j]
            .into_iter()
            .filter_map(|k| values.get(k))
            .min_by(|a, b| (*a - *v).abs().total_cmp(&(*b - *v).abs()));
        if let Some(u) = nearest {
            if (u - *v).abs() <= tol {
                *v = *u;
            }
        }
    }
}

/// Runs `warmup` uniform samples then `budget` acquisition-driven evaluations of `objective` on
/// the box `domain`. Objective errors and non-finite values are recorded and the point skipped.
pub fn bo_loop<F>(mut objective: F, domain: &[(f64, f64)], cfg: &BoConfig) -> Result<BoState>
where
    F: FnMut(&[f64]) -> std::result::Result<f64, String>,
{
    let nu = HalfIntegerSmoothness::from_nu(cfg.nu)?;
    let d = domain.len();
    let search = SearchConfig { bounds: domain.to_vec(), ..cfg.search.clone() };
    search.validate()?;
    cfg.train.validate()?;
    if !(cfg.sigma_y > 0.0 && cfg.sigma_y.is_finite()) || !(cfg.noise_sd >= 0.0 && cfg.noise_sd.is_finite()) {
        return Err(Error::Domain("sigma_y must be positive and noise_sd non-negative".into()));
    }
    let mut omegas = match &cfg.omega_init {
        Some(w) if w.len() == d => w.clone(),
        Some(w) => return Err(Error::DimensionMismatch { expected: d, got: w.len() }),
        None => domain.iter().map(|(lo, hi)| 10.0 / (hi - lo)).collect(),
    };
    // Length scales beyond the box are not identifiable and make the packet bases ill-conditioned.
    let max_width = domain.iter().map(|(lo, hi)| hi - lo).fold(0.0, f64::max);
    let reach = search.locality.unwrap_or(2 * nu.q() + 3);
    let sign = if cfg.minimize { -1.0 } else { 1.0 };
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::Domain(e.to_string()))?;
    let mut sample_rng = stream_rng(cfg.seed, 1);
    let mut noise_rng = stream_rng(cfg.seed, 2);

    let mut obs = Observations { xs: Vec::new(), ys: Vec::new() };
    let mut history = Vec::new();
    let mut failures = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut observe = |x: Vec<f64>, iteration: Option<usize>, acquisition: Option<f64>, recommended: Option<Vec<f64>>, obs: &mut Observations| {
        match objective(&x) {
            Ok(v) if v.is_finite() => {
                let y = v + noise.sample(&mut noise_rng);
                best = best.max(sign * y);
                obs.xs.push(x.clone());
                obs.ys.push(sign * y);
                history.push(BoRecord { iteration, x, y, acquisition, best_observed: sign * best, recommended });
            }
            Ok(v) => failures.push((x, format!("non-finite objective value {v}"))),
            Err(e) => failures.push((x, e)),
        }
    };

    for _ in 0..cfg.warmup {
        let x: Vec<f64> = domain.iter().map(|(lo, hi)| sample_rng.random_range(*lo..*hi)).collect();
        observe(x, None, None, None, &mut obs);
    }

    let mut timings = Vec::with_capacity(cfg.budget);
    for it in 0..cfg.budget {
        let started = Instant::now();
        let mut model = obs.fit(nu, &omegas, cfg.sigma_y)?;
        if cfg.retrain_every > 0 && it % cfg.retrain_every == 0 {
            let mut opts = cfg.train;
            opts.seed = cfg.train.seed.wrapping_add(it as u64);
            opts.min_omega = opts.min_omega.max(1.0 / max_width);
            if model.stacked_len() <= cfg.exact_below {
                opts.logdet = LogdetMode::Exact;
                opts.trace = TraceMode::Exact;
            }
            let (trained, _) = train(&model, &opts)?;
            omegas = trained.omegas().to_vec();
            model = trained;
        }
        model.build_caches(true)?;
        let retrain_secs = started.elapsed().as_secs_f64();

        let started = Instant::now();
        let recommended = obs.posterior_argmax(&model)?;
        let acq = ModelAcquisition::new(&model, &cfg.acquisition, reach)?;
        let mut order: Vec<usize> = (0..obs.ys.len()).collect();
        order.sort_by(|a, b| obs.ys[*b].total_cmp(&obs.ys[*a]));
        let starts: Vec<Vec<f64>> = order.iter().take(cfg.history_starts).map(|&i| obs.xs[i].clone()).collect();
        let step_cfg = SearchConfig { seed: search.seed.wrapping_add(it as u64), ..search.clone() };
        let found = multi_ascend(&acq, &step_cfg, &starts)?;
        let mut x = found.x;
        snap(&mut x, &model, domain, cfg.snap_rel);
        timings.push(IterationTiming { retrain_secs, acquisition_secs: started.elapsed().as_secs_f64() });
        observe(x, Some(it), Some(found.value), Some(recommended), &mut obs);
    }

    let mut model = obs.fit(nu, &omegas, cfg.sigma_y)?;
    model.compute_mean_weights()?;
    let recommendation = obs.posterior_argmax(&model)?;
    Ok(BoState {
        model,
        history,
        timings,
        failures,
        iterations: cfg.budget,
        budget: cfg.budget,
        warmup: cfg.warmup,
        recommendation,
    })
}
