//! Run configuration shared by every subcommand.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use kpgp_core::estimators::EstimatorOptions;
use kpgp_core::{
    AcquisitionSpec, BoConfig, GsOptions, HalfIntegerSmoothness, LogdetMode, SearchConfig, TestFunction, TraceMode,
    TrainOptions, VarMode,
};
use serde::{Deserialize, Serialize};

use crate::data::ParseError;

/// `ω` for every dimension, or one value per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OmegaInit {
    Scalar(f64),
    PerDim(Vec<f64>),
}

impl OmegaInit {
    pub fn resolve(&self, d: usize) -> Result<Vec<f64>, kpgp_core::Error> {
        let omegas = match self {
            Self::Scalar(w) => vec![*w; d],
            Self::PerDim(w) if w.len() == d => w.clone(),
            Self::PerDim(w) => return Err(kpgp_core::Error::DimensionMismatch { expected: d, got: w.len() }),
        };
        if omegas.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(kpgp_core::Error::Domain("omega_init must be positive and finite".into()));
        }
        Ok(omegas)
    }
}

/// Likelihood ascent settings; the estimator modes follow `exact_logdet`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub max_iters: usize,
    pub step: f64,
    pub min_omega: f64,
    pub max_omega: f64,
    pub tol: f64,
    /// Hutchinson probes for the gradient trace.
    pub trace_samples: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainOptions::default();
        Self { max_iters: t.max_iters, step: t.step, min_omega: t.min_omega, max_omega: t.max_omega, tol: t.tol, trace_samples: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub function: TestFunction,
    pub dims: usize,
    pub sizes: Vec<usize>,
    pub reps: usize,
    pub test_points: usize,
    pub noise_sd: f64,
    /// Every repetition reuses the base seed instead of `seed + rep`.
    pub shared_seed: bool,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            function: TestFunction::SchwefelPaper,
            dims: 2,
            sizes: vec![1000],
            reps: 3,
            test_points: 100,
            noise_sd: 1.0,
            shared_seed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoSection {
    pub function: TestFunction,
    pub dims: usize,
    pub warmup: usize,
    pub budget: usize,
    /// Model noise level in units of the standardized responses.
    pub sigma_y: f64,
    /// Standard deviation of the noise added to each evaluation.
    pub noise_sd: f64,
    pub train_iters: usize,
    /// Exact log-determinant and trace while `D·n` stays at or below this.
    pub exact_below: usize,
    pub acquisition: AcquisitionSpec,
    pub history_starts: usize,
    pub snap_rel: f64,
    pub minimize: bool,
}

impl Default for BoSection {
    fn default() -> Self {
        let b = BoConfig::default();
        Self {
            function: TestFunction::SchwefelPaper,
            dims: 2,
            warmup: b.warmup,
            budget: 50,
            sigma_y: b.sigma_y,
            noise_sd: b.noise_sd,
            train_iters: b.train.max_iters,
            exact_below: b.exact_below,
            acquisition: b.acquisition,
            history_starts: b.history_starts,
            snap_rel: b.snap_rel,
            minimize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub nu: f64,
    /// `None` uses `10 / width` of each input column or domain.
    pub omega_init: Option<OmegaInit>,
    pub sigma_y: f64,
    pub gs: GsOptions,
    pub estimators: EstimatorOptions,
    pub train: TrainSection,
    pub search: SearchConfig,
    pub seed: u64,
    /// Dense log-determinant and trace instead of the stochastic estimators; small `n` only.
    pub exact_logdet: bool,
    pub var_mode: VarMode,
    /// Retrain `ω` every this many BO iterations; `1` retrains every iteration, `0` never.
    pub retrain_every: usize,
    pub bench: BenchSection,
    pub bo: BoSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            nu: 0.5,
            omega_init: None,
            sigma_y: 0.1,
            gs: GsOptions::default(),
            estimators: EstimatorOptions::default(),
            train: TrainSection::default(),
            search: SearchConfig::default(),
            seed: 0,
            exact_logdet: false,
            var_mode: VarMode::Banded,
            retrain_every: BoConfig::default().retrain_every,
            bench: BenchSection::default(),
            bo: BoSection::default(),
        }
    }
}

impl RunConfig {
    /// Reads a JSON configuration, or the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg = serde_json::from_str(&text)
            .map_err(|e| ParseError::new(e.line() as u64, e.to_string()))
            .with_context(|| format!("parsing {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), kpgp_core::Error> {
        let domain = |msg: &str| Err(kpgp_core::Error::Domain(msg.into()));
        HalfIntegerSmoothness::from_nu(self.nu)?;
        if !(self.sigma_y > 0.0 && self.sigma_y.is_finite()) {
            return domain("sigma_y must be positive");
        }
        self.gs.validate()?;
        self.estimators.validate()?;
        self.train_options().validate()?;
        if self.train.trace_samples == 0 {
            return domain("train.trace_samples must be positive");
        }
        if self.bench.dims == 0 || self.bench.reps == 0 || self.bench.test_points == 0 || self.bench.sizes.is_empty() {
            return domain("bench dims, reps, test_points and sizes must be non-empty");
        }
        if !(self.bench.noise_sd >= 0.0 && self.bench.noise_sd.is_finite()) {
            return domain("bench.noise_sd must be non-negative");
        }
        if self.bo.dims == 0 {
            return domain("bo.dims must be positive");
        }
        Ok(())
    }

    pub fn nu(&self) -> Result<HalfIntegerSmoothness, kpgp_core::Error> {
        HalfIntegerSmoothness::from_nu(self.nu)
    }

    /// `omega_init`, or `10 / width` per dimension.
    pub fn omegas(&self, widths: &[f64]) -> Result<Vec<f64>, kpgp_core::Error> {
        match &self.omega_init {
            Some(w) => w.resolve(widths.len()),
            None => Ok(widths.iter().map(|w| if *w > 0.0 { 10.0 / w } else { 10.0 }).collect()),
        }
    }

    pub fn logdet_mode(&self) -> LogdetMode {
        if self.exact_logdet {
            LogdetMode::Exact
        } else {
            LogdetMode::Stochastic(EstimatorOptions { seed: self.seed, ..self.estimators })
        }
    }

    pub fn trace_mode(&self) -> TraceMode {
        if self.exact_logdet {
            TraceMode::Exact
        } else {
            TraceMode::Stochastic { samples: self.train.trace_samples, seed: self.seed }
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            max_iters: self.train.max_iters,
            step: self.train.step,
            min_omega: self.train.min_omega,
            max_omega: self.train.max_omega,
            tol: self.train.tol,
            logdet: self.logdet_mode(),
            trace: self.trace_mode(),
            seed: self.seed,
        }
    }

    pub fn bo_config(&self) -> Result<BoConfig, kpgp_core::Error> {
        let b = &self.bo;
        let omega_init = match &self.omega_init {
            Some(w) => Some(w.resolve(b.dims)?),
            None => None,
        };
        Ok(BoConfig {
            nu: self.nu,
            sigma_y: b.sigma_y,
            omega_init,
            warmup: b.warmup,
            budget: b.budget,
            retrain_every: self.retrain_every,
            train: TrainOptions { max_iters: b.train_iters, ..self.train_options() },
            exact_below: if self.exact_logdet { usize::MAX } else { b.exact_below },
            acquisition: b.acquisition,
            search: SearchConfig { seed: self.seed, ..self.search.clone() },
            history_starts: b.history_starts,
            snap_rel: b.snap_rel,
            noise_sd: b.noise_sd,
            minimize: b.minimize,
            seed: self.seed,
        })
    }
}
