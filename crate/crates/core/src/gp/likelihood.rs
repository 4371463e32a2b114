//! Log marginal likelihood `l = -Yᵀ R Y - log|k(X, X) + σ² I|` with `R = (k(X, X) + σ² I)⁻¹`,
//! and its ω-gradient.
//!
//! ```text
//! R v = σ⁻² v - σ⁻⁴ W K_sys⁻¹ Wᵀ v
//! log|k(X, X) + σ² I| = log|K_sys| + Σ_d (log|Φ_d| - log|A_d|) + 2 n log σ
//! ∂l/∂ω_d = t_dᵀ B_d⁻¹ Ψ_d t_d - tr(W_dᵀ R W_d B_d⁻¹ Ψ_d),    t_d = W_dᵀ R Y
//! ```

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AdditiveGpModel;
use crate::error::{Error, Result};
use crate::estimators::{logdet_estimate, stream_rng, EstimatorOptions, Estimate, FnOperator};

/// How `log|K_sys|` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogdetMode {
    /// Dense Cholesky of `I + σ⁻² k(X, X)`, using `|K_sys| = |K|⁻¹ |I + σ⁻² W K Wᵀ|`; for small problems.
    Exact,
    /// Power method and truncated Taylor series with Gaussian probes.
    Stochastic(EstimatorOptions),
}

/// How the gradient trace term is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    /// One probe per unit vector, for small problems.
    Exact,
    /// Hutchinson estimate with Gaussian probes.
    Stochastic { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodReport {
    pub value: f64,
    /// `Yᵀ R Y`.
    pub quad: f64,
    /// `log|k(X, X) + σ² I|`.
    pub logdet: f64,
    /// Standard error of the log-determinant (zero when exact).
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    pub value: f64,
    pub quad: f64,
    pub trace: f64,
    pub stderr: f64,
}

impl AdditiveGpModel {
    /// `R v` for an observation-space `v`.
    pub fn apply_r(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), got: v.len() });
        }
        let inv_s2 = self.sigma_y.powi(-2);
        let solved = self.gs_solve(&self.gather_all(v))?;
        let back = self.scatter_all(&solved.solution);
        Ok(v.iter().zip(&back).map(|(a, b)| inv_s2 * a - inv_s2 * inv_s2 * b).collect())
    }

    /// `log|K_sys|` and its standard error.
    pub fn logdet_ksys(&self, mode: &LogdetMode) -> Result<(f64, f64)> {
        match mode {
            LogdetMode::Exact => {
                let n = self.n();
                let g = self.gram_dense()? * self.sigma_y.powi(-2) + DMatrix::identity(n, n);
                let chol = g
                    .cholesky()
                    .ok_or_else(|| Error::Singular("system matrix is not positive definite".into()))?;
                let logdet_g = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                Ok((logdet_g - self.log_det_k(), 0.0))
            }
            LogdetMode::Stochastic(opts) => {
                let op = FnOperator::new(self.stacked_len(), |v: &[f64], out: &mut [f64]| self.apply_ksys(v, out));
                let e = logdet_estimate(&op, opts)?;
                Ok((e.value, e.stderr))
            }
        }
    }

    pub fn log_likelihood(&self, mode: &LogdetMode) -> Result<LikelihoodReport> {
        let ry = self.apply_r(&self.y)?;
        let quad: f64 = self.y.iter().zip(&ry).map(|(a, b)| a * b).sum();
        let (ld_sys, stderr) = self.logdet_ksys(mode)?;
        let logdet = ld_sys + self.log_det_k() + 2.0 * self.n() as f64 * self.sigma_y.ln();
        let value = -quad - logdet;
        if !value.is_finite() {
            return Err(Error::NonFinite("log-likelihood".into()));
        }
        Ok(LikelihoodReport { value, quad, logdet, stderr })
    }

    /// `∂l/∂ω_d`.
    pub fn loglik_grad(&self, d: usize, mode: &TraceMode) -> Result<GradReport> {
        let ry = self.apply_r(&self.y)?;
        self.grad_with_ry(d, &ry, mode)
    }

    /// `∂l/∂ω_d` for every dimension, sharing `R Y`.
    pub fn loglik_grad_all(&self, mode: &TraceMode) -> Result<Vec<GradReport>> {
        let ry = self.apply_r(&self.y)?;
        (0..self.d_dims()).map(|d| self.grad_with_ry(d, &ry, mode)).collect()
    }

    fn grad_with_ry(&self, d: usize, ry: &[f64], mode: &TraceMode) -> Result<GradReport> {
        if d >= self.d_dims() {
            return Err(Error::DimensionMismatch { expected: self.d_dims(), got: d });
        }
        let dim = &self.dims[d];
        let g = dim.grad()?;
        // B⁻¹ Ψ v.
        let dk = |v: &[f64]| -> Result<Vec<f64>> {
            let mut u = g.factor.psi.matvec(v)?;
            g.b_lu.solve_in_place(&mut u)?;
            Ok(u)
        };
        let t = dim.gather(ry);
        let quad: f64 = t.iter().zip(&dk(&t)?).map(|(a, b)| a * b).sum();
        let n = self.n();
        // (W_d v)ᵀ R (W_d B⁻¹ Ψ v).
        let sample = |v: &[f64]| -> Result<f64> {
            let u = dk(v)?;
            let mut wu = vec![0.0; n];
            dim.scatter(&u, &mut wu);
            let rwu = self.apply_r(&wu)?;
            let mut wv = vec![0.0; n];
            dim.scatter(v, &mut wv);
            Ok(wv.iter().zip(&rwu).map(|(a, b)| a * b).sum())
        };
        let m = dim.len();
        let (trace, stderr) = match *mode {
            TraceMode::Exact => {
                let parts = (0..m)
                    .into_par_iter()
                    .map(|i| {
                        let mut e = vec![0.0; m];
                        e[i] = 1.0;
                        sample(&e)
                    })
                    .collect::<Result<Vec<_>>>()?;
                (parts.iter().sum(), 0.0)
            }
            TraceMode::Stochastic { samples, seed } => {
                if samples == 0 {
                    return Err(Error::Domain("trace samples must be positive".into()));
                }
                let parts = (0..samples)
                    .into_par_iter()
                    .map(|qi| {
                        let mut rng = stream_rng(seed ^ ((d as u64) << 32), qi as u64);
                        let v: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
                        sample(&v)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let e = Estimate::from_samples(&parts);
                (e.value, e.stderr)
            }
        };
        Ok(GradReport { value: quad - trace, quad, trace, stderr })
    }
}
