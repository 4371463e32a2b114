//! Block Gauss-Seidel for `K_sys ṽ = u`.
//!
//! Block `d` of `K_sys` is `Φ_d⁻¹ A_d + σ⁻² C_d`, whose inverse is `σ² (σ² A_d + Φ_d C_d)⁻¹ Φ_d`.
//! With the running sum `s = Σ_d W_d ṽ_d`, one block update reads
//!
//! ```text
//! ṽ_d ← (σ² A_d + Φ_d C_d)⁻¹ Φ_d (σ² u_d - W_dᵀ s + C_d ṽ_d)
//! ```

use serde::{Deserialize, Serialize};

use super::AdditiveGpModel;
use crate::error::{Error, Result};

/// Sweeping stops early after this many consecutive checks without the residual dropping
/// below `STALL_GAIN` times its best value: the residual has reached its rounding floor.
const STALL_CHECKS: usize = 8;
const STALL_GAIN: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GsOptions {
    /// Sweep limit; `None` picks `ceil(4 log2(n + 1)) + 10`.
    pub max_sweeps: Option<usize>,
    /// Relative residual `‖u - K_sys ṽ‖ / ‖u‖` at which sweeping stops.
    pub tol: f64,
    /// Sweeps between residual checks. The residual is also checked after the first sweep.
    pub check_every: usize,
}

impl Default for GsOptions {
    fn default() -> Self {
        Self { max_sweeps: None, tol: 1e-8, check_every: 5 }
    }
}

impl GsOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_sweeps == Some(0) || self.check_every == 0 || !(self.tol > 0.0) {
            return Err(Error::Domain("sweep counts and tolerance must be positive".into()));
        }
        Ok(())
    }

    pub fn sweeps_for(&self, n: usize) -> usize {
        self.max_sweeps.unwrap_or_else(|| (4.0 * ((n + 1) as f64).log2()).ceil() as usize + 10)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GsReport {
    pub solution: Vec<f64>,
    pub sweeps: usize,
    /// Relative residual at the last check.
    pub residual: f64,
    pub converged: bool,
    /// `(sweep, relative residual)` at every check.
    pub history: Vec<(usize, f64)>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl AdditiveGpModel {
    /// Solves `K_sys ṽ = u` for a stacked `u`. Non-convergence is reported, not raised.
    pub fn gs_solve(&self, u: &[f64]) -> Result<GsReport> {
        self.gs_solve_with(u, &self.gs)
    }

    pub fn gs_solve_with(&self, u: &[f64], opts: &GsOptions) -> Result<GsReport> {
        opts.validate()?;
        let len = self.stacked_len();
        if u.len() != len {
            return Err(Error::DimensionMismatch { expected: len, got: u.len() });
        }
        let unorm = norm(u);
        if unorm == 0.0 {
            return Ok(GsReport { solution: vec![0.0; len], sweeps: 0, residual: 0.0, converged: true, history: vec![] });
        }
        let s2 = self.sigma_y * self.sigma_y;
        let max_sweeps = opts.sweeps_for(self.n());
        let mut v = vec![0.0; len];
        let mut s = vec![0.0; self.n()];
        let mut spread = vec![0.0; self.n()];
        let mut history = Vec::new();
        let mut residual = f64::INFINITY;
        let mut best = f64::INFINITY;
        let mut stalled = 0;
        let mut sweeps = 0;
        while sweeps < max_sweeps {
            sweeps += 1;
            for (d, dim) in self.dims.iter().enumerate() {
                let r = self.block(d);
                let ws = dim.gather(&s);
                let old = &v[r.clone()];
                let rhs: Vec<f64> = u[r.clone()]
                    .iter()
                    .zip(&ws)
                    .zip(old.iter().zip(&dim.counts))
                    .map(|((ui, wi), (vi, ci))| s2 * ui - wi + ci * vi)
                    .collect();
                let mut new = dim.kp.phi.matvec(&rhs)?;
                dim.sys_lu.solve_in_place(&mut new)?;
                let delta: Vec<f64> = new.iter().zip(old).map(|(a, b)| a - b).collect();
                dim.scatter(&delta, &mut spread);
                s.iter_mut().zip(&spread).for_each(|(si, di)| *si += di);
                v[r].copy_from_slice(&new);
            }
            if sweeps == 1 || sweeps % opts.check_every == 0 || sweeps == max_sweeps {
                residual = self.relative_residual(u, unorm, &v)?;
                history.push((sweeps, residual));
                if !residual.is_finite() {
                    return Err(Error::NonFinite(format!("Gauss-Seidel residual after {sweeps} sweeps")));
                }
                if residual <= opts.tol {
                    break;
                }
                if residual < STALL_GAIN * best {
                    best = residual;
                    stalled = 0;
                } else {
                    stalled += 1;
                    if stalled >= STALL_CHECKS {
                        break;
                    }
                }
            }
        }
        Ok(GsReport { solution: v, sweeps, residual, converged: residual <= opts.tol, history })
    }

    fn relative_residual(&self, u: &[f64], unorm: f64, v: &[f64]) -> Result<f64> {
        let mut kv = vec![0.0; v.len()];
        self.apply_ksys(v, &mut kv)?;
        let r: f64 = u.iter().zip(&kv).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        Ok(r / unorm)
    }
}
