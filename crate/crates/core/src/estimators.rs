//! Randomized estimators over abstract linear operators: power iteration, Hutchinson trace, and the
//! truncated-Taylor log-determinant.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A square linear map applied by value.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64], out: &mut [f64]) -> Result<()>;
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        if v.len() != self.ncols() {
            return Err(Error::DimensionMismatch { expected: self.ncols(), got: v.len() });
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).iter().zip(v).map(|(a, b)| a * b).sum();
        }
        Ok(())
    }
}

/// Operator defined by a closure.
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F> FnOperator<F>
where
    F: Fn(&[f64], &mut [f64]) -> Result<()> + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> LinearOperator for FnOperator<F>
where
    F: Fn(&[f64], &mut [f64]) -> Result<()> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        (self.f)(v, out)
    }
}

/// `c * op`.
pub struct Scaled<'a, O: ?Sized> {
    pub op: &'a O,
    pub c: f64,
}

impl<O: LinearOperator + ?Sized> LinearOperator for Scaled<'_, O> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        self.op.apply(v, out)?;
        out.iter_mut().for_each(|o| *o *= self.c);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorOptions {
    /// Probe vectors per trace or log-determinant estimate.
    pub trace_samples: usize,
    /// Taylor terms; `None` picks `ceil(10 log(dim))`.
    pub taylor_order: Option<usize>,
    pub power_restarts: usize,
    pub power_steps: usize,
    pub seed: u64,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self { trace_samples: 64, taylor_order: None, power_restarts: 8, power_steps: 50, seed: 0 }
    }
}

impl EstimatorOptions {
    pub fn validate(&self) -> Result<()> {
        if self.trace_samples == 0 || self.power_restarts == 0 || self.power_steps == 0 || self.taylor_order == Some(0)
        {
            return Err(Error::Domain("estimator counts must be positive".into()));
        }
        Ok(())
    }

    pub fn taylor_terms(&self, dim: usize) -> usize {
        self.taylor_order.unwrap_or_else(|| (10.0 * (dim.max(2) as f64).ln()).ceil() as usize)
    }
}

/// Independent stream `stream` of the generator seeded by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Largest eigenvalue of a symmetric positive semi-definite operator: the best Rayleigh quotient
/// over `restarts` runs of `steps` normalized power iterations from Rademacher starts.
pub fn power_method<O: LinearOperator + ?Sized>(op: &O, restarts: usize, steps: usize, seed: u64) -> Result<f64> {
    let n = op.dim();
    if n == 0 {
        return Ok(0.0);
    }
    let runs: Vec<Result<f64>> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            let mut v: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            let s = 1.0 / norm(&v);
            v.iter_mut().for_each(|x| *x *= s);
            let mut w = vec![0.0; n];
            let mut rq = 0.0;
            for _ in 0..steps.max(1) {
                op.apply(&v, &mut w)?;
                rq = dot(&v, &w);
                let nw = norm(&w);
                if !(nw > 0.0) {
                    break;
                }
                for (vi, wi) in v.iter_mut().zip(&w) {
                    *vi = wi / nw;
                }
            }
            Ok(rq)
        })
        .collect();
    let mut best = f64::NEG_INFINITY;
    for r in runs {
        best = best.max(r?);
    }
    Ok(best)
}

/// Mean of per-probe samples and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let q = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / q;
        let var = if samples.len() > 1 {
            samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (q - 1.0)
        } else {
            0.0
        };
        Self { value: mean, stderr: (var / q).sqrt() }
    }
}

/// `(1/Q) Σ v_qᵀ op v_q` with standard normal probes.
pub fn hutchinson_trace<O: LinearOperator + ?Sized>(op: &O, samples: usize, seed: u64) -> Result<Estimate> {
    let n = op.dim();
    let per_probe: Vec<Result<f64>> = (0..samples.max(1))
        .into_par_iter()
        .map(|qi| {
            let mut rng = stream_rng(seed, qi as u64);
            let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let mut w = vec![0.0; n];
            op.apply(&v, &mut w)?;
            Ok(dot(&v, &w))
        })
        .collect();
    let samples = per_probe.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Estimate::from_samples(&samples))
}

/// Log-determinant estimate with its diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogdetEstimate {
    pub value: f64,
    pub stderr: f64,
    /// Spectral bound used to map the spectrum into `(0, 1]`.
    pub lambda_hat: f64,
    /// Number of times the bound was doubled.
    pub reinflations: usize,
}

const LAMBDA_SAFETY: f64 = 1.05;
const MAX_REINFLATIONS: usize = 3;

/// `log det(op)` for a symmetric positive definite operator:
/// `N log λ̂ - Σ_{s=1..S} (1/s) tr((I - op/λ̂)^s)`, each trace by Gaussian probes, `λ̂ = 1.05 λ_max`.
pub fn logdet_estimate<O: LinearOperator + ?Sized>(op: &O, opts: &EstimatorOptions) -> Result<LogdetEstimate> {
    opts.validate()?;
    let n = op.dim();
    if n == 0 {
        return Ok(LogdetEstimate { value: 0.0, stderr: 0.0, lambda_hat: 0.0, reinflations: 0 });
    }
    let lambda_max = power_method(op, opts.power_restarts, opts.power_steps, opts.seed ^ 0x5eed_0001)?;
    if !(lambda_max > 0.0 && lambda_max.is_finite()) {
        return Err(Error::Estimator(format!("power method returned {lambda_max}")));
    }
    let terms = opts.taylor_terms(n);
    let mut lambda_hat = LAMBDA_SAFETY * lambda_max;
    for reinflations in 0..=MAX_REINFLATIONS {
        let per_probe: Vec<Result<Option<f64>>> = (0..opts.trace_samples)
            .into_par_iter()
            .map(|qi| {
                let mut rng = stream_rng(opts.seed, qi as u64);
                let v0: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                let mut v = v0.clone();
                let mut w = vec![0.0; n];
                let mut acc = 0.0;
                for s in 1..=terms {
                    op.apply(&v, &mut w)?;
                    let vv = dot(&v, &v);
                    if vv > 0.0 && dot(&v, &w) / vv > lambda_hat {
                        return Ok(None);
                    }
                    for (vi, wi) in v.iter_mut().zip(&w) {
                        *vi -= wi / lambda_hat;
                    }
                    acc += dot(&v0, &v) / s as f64;
                }
                Ok(Some(-acc))
            })
            .collect();
        let mut samples = Vec::with_capacity(opts.trace_samples);
        let mut exceeded = false;
        for r in per_probe {
            match r? {
                Some(s) => samples.push(s),
                None => exceeded = true,
            }
        }
        if !exceeded {
            let e = Estimate::from_samples(&samples);
            return Ok(LogdetEstimate {
                value: n as f64 * lambda_hat.ln() + e.value,
                stderr: e.stderr,
                lambda_hat,
                reinflations,
            });
        }
        lambda_hat *= 2.0;
    }
    Err(Error::Estimator("spectral bound still exceeded after re-inflation".into()))
}
