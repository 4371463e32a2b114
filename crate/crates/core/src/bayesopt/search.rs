//! Projected gradient ascent on an acquisition, with bracket hints threaded between steps.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::acquisition::Acquisition;
use crate::error::{Error, Result};
use crate::estimators::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub restarts: usize,
    pub max_steps: usize,
    /// Step `δ` in `x ← x + δ ∇A`; `None` starts from a move of 1% of the box per step.
    pub learning_rate: Option<f64>,
    /// Intervals scanned either side of the previous bracket before binary search;
    /// `None` uses `2ν + 2`.
    pub locality: Option<usize>,
    /// Box per dimension; empty means "supplied by the caller".
    pub bounds: Vec<(f64, f64)>,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { restarts: 16, max_steps: 100, learning_rate: None, locality: None, bounds: Vec::new(), seed: 0 }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || matches!(self.learning_rate, Some(d) if !(d > 0.0 && d.is_finite())) {
            return Err(Error::Domain("restarts must be positive and the learning rate positive".into()));
        }
        if self.bounds.is_empty() || self.bounds.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
            return Err(Error::Domain("bounds must be finite non-empty intervals".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub steps: usize,
    pub hint_hits: usize,
    pub hint_misses: usize,
}

/// Gradient norm below which a point counts as stationary.
const GRAD_TOL: f64 = 1e-6;
const GROW: f64 = 1.2;
const SHRINK: f64 = 0.5;

fn project(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, (lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Ascent from `x0`: steps that lower the acquisition are retried with half the step, accepted
/// steps grow it. Returns the best visited point.
pub fn ascend<A: Acquisition + ?Sized>(acq: &A, cfg: &SearchConfig, x0: &[f64]) -> Result<AscentResult> {
    cfg.validate()?;
    if x0.len() != acq.dim() || cfg.bounds.len() != acq.dim() {
        return Err(Error::DimensionMismatch { expected: acq.dim(), got: x0.len().min(cfg.bounds.len()) });
    }
    let mut hint = acq.new_hint();
    let mut x = x0.to_vec();
    project(&mut x, &cfg.bounds);
    let (mut value, mut grad) = acq.value_grad(&x, hint.as_mut())?;
    let width = cfg.bounds.iter().map(|(lo, hi)| hi - lo).fold(0.0, f64::max);
    let gnorm = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut delta = match cfg.learning_rate {
        Some(d) => d,
        None => 0.01 * width / gnorm(&grad).max(f64::MIN_POSITIVE),
    };
    let mut steps = 0;
    while steps < cfg.max_steps {
        let g = gnorm(&grad);
        if !(g >= GRAD_TOL) || delta * g < 1e-12 * width {
            break;
        }
        steps += 1;
        let mut trial: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi + delta * gi).collect();
        project(&mut trial, &cfg.bounds);
        if trial == x {
            break;
        }
        let mut trial_hint = hint.clone();
        let (v, gr) = acq.value_grad(&trial, trial_hint.as_mut())?;
        if v > value {
            x = trial;
            value = v;
            grad = gr;
            hint = trial_hint;
            delta *= GROW;
        } else {
            delta *= SHRINK;
        }
    }
    let (hint_hits, hint_misses) = hint.map_or((0, 0), |h| (h.hits, h.misses));
    Ok(AscentResult { x, value, steps, hint_hits, hint_misses })
}

/// Best ascent over the given starts plus `cfg.restarts` uniform random starts, run in parallel.
pub fn multi_ascend<A: Acquisition + ?Sized>(acq: &A, cfg: &SearchConfig, extra_starts: &[Vec<f64>]) -> Result<AscentResult> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, 0);
    let mut starts: Vec<Vec<f64>> = extra_starts.to_vec();
    for _ in 0..cfg.restarts {
        starts.push(cfg.bounds.iter().map(|(lo, hi)| rng.random_range(*lo..*hi)).collect());
    }
    let results = starts.par_iter().map(|x0| ascend(acq, cfg, x0)).collect::<Result<Vec<_>>>()?;
    results
        .into_iter()
        .reduce(|a, b| if b.value > a.value { b } else { a })
        .ok_or_else(|| Error::Domain("no starting points".into()))
}
