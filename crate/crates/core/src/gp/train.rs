//! Gradient ascent of the log-likelihood over `log ω_d` with backtracking. `σ_y` is held fixed.

use serde::{Deserialize, Serialize};

use super::{AdditiveGpModel, LogdetMode, TraceMode};
use crate::error::{Error, Result};
use crate::estimators::EstimatorOptions;

const MAX_HALVINGS: usize = 8;
const GROWTH: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub max_iters: usize,
    /// Largest change of any `log ω_d` in one step.
    pub step: f64,
    pub min_omega: f64,
    pub max_omega: f64,
    /// Stop once an accepted step changes `l` by less than this.
    pub tol: f64,
    pub logdet: LogdetMode,
    pub trace: TraceMode,
    /// Seed for the stochastic estimators; iteration `t` uses `seed + t`.
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            max_iters: 30,
            step: 0.5,
            min_omega: 1e-3,
            max_omega: 1e4,
            tol: 1e-3,
            logdet: LogdetMode::Stochastic(EstimatorOptions::default()),
            trace: TraceMode::Stochastic { samples: 64, seed: 0 },
            seed: 0,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.min_omega > 0.0 && self.max_omega >= self.min_omega && self.tol > 0.0) {
            return Err(Error::Domain("invalid training options".into()));
        }
        Ok(())
    }

    /// Options whose estimators all draw from the stream for iteration `it`.
    fn seeded(&self, it: u64) -> (LogdetMode, TraceMode) {
        let seed = self.seed.wrapping_add(it);
        let logdet = match self.logdet {
            LogdetMode::Stochastic(o) => LogdetMode::Stochastic(EstimatorOptions { seed, ..o }),
            m => m,
        };
        let trace = match self.trace {
            TraceMode::Stochastic { samples, .. } => TraceMode::Stochastic { samples, seed },
            m => m,
        };
        (logdet, trace)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub iterations: usize,
    pub accepted: usize,
    /// True when the last iteration found no improving step.
    pub stalled: bool,
    /// `l` after every accepted step, starting from the initial model. Values within one iteration
    /// share an estimator seed; values from different iterations do not.
    pub trajectory: Vec<f64>,
    pub omega_path: Vec<Vec<f64>>,
    /// Gradient failure that ended training early: a numerical breakdown, or too few points for
    /// the derivative packets.
    pub failure: Option<String>,
}

/// Fits `ω` by ascent on `log ω`. Returns the final model (without prediction caches) and a report.
pub fn train(model: &AdditiveGpModel, opts: &TrainOptions) -> Result<(AdditiveGpModel, TrainReport)> {
    opts.validate()?;
    let mut current = model.clone();
    let mut report = TrainReport {
        iterations: 0,
        accepted: 0,
        stalled: false,
        trajectory: Vec::new(),
        omega_path: vec![current.omegas.clone()],
        failure: None,
    };
    if opts.max_iters == 0 {
        return Ok((current, report));
    }
    let (ld0, _) = opts.seeded(0);
    report.trajectory.push(current.log_likelihood(&ld0)?.value);
    let mut step = opts.step;
    for it in 0..opts.max_iters {
        report.iterations = it + 1;
        let (logdet, trace) = opts.seeded(it as u64);
        let base = current.log_likelihood(&logdet)?.value;
        let grads = match current.loglik_grad_all(&trace) {
            Ok(g) => g,
            Err(e @ (Error::Singular(_) | Error::Conditioning(_) | Error::NonFinite(_) | Error::Size { .. })) => {
                report.failure = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        let glog: Vec<f64> = grads.iter().zip(&current.omegas).map(|(g, w)| g.value * w).collect();
        let gmax = glog.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if !(gmax > 0.0 && gmax.is_finite()) {
            break;
        }
        let mut trial = step;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let omegas: Vec<f64> = current
                .omegas
                .iter()
                .zip(&glog)
                .map(|(w, g)| (w.ln() + trial * g / gmax).exp().clamp(opts.min_omega, opts.max_omega))
                .collect();
            if omegas == current.omegas {
                break;
            }
            let candidate = current.refit(&omegas).and_then(|c| {
                let l = c.log_likelihood(&logdet)?.value;
                Ok((c, l))
            });
            match candidate {
                Ok((c, l)) if l > base => {
                    accepted = Some((c, l));
                    break;
                }
                _ => trial *= 0.5,
            }
        }
        let Some((next, l)) = accepted else {
            report.stalled = true;
            break;
        };
        current = next;
        report.accepted += 1;
        report.trajectory.push(l);
        report.omega_path.push(current.omegas.clone());
        step = (trial * GROWTH).min(opts.step * 4.0);
        if (l - base).abs() < opts.tol {
            break;
        }
    }
    Ok((current, report))
}
