//! GP-UCB and expected improvement with x-gradients from the cached posterior.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::gp::{AdditiveGpModel, Prediction, QueryHint};

/// Variance below which EI uses its noiseless limit `max(μ - y*, 0)`.
const EI_DEGENERATE_VAR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionKind {
    Ucb,
    Ei,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionSpec {
    pub kind: AcquisitionKind,
    /// Fixed UCB weight; `None` uses `√(2 log(n² D))`.
    #[serde(default)]
    pub beta: Option<f64>,
}

impl Default for AcquisitionSpec {
    fn default() -> Self {
        Self { kind: AcquisitionKind::Ucb, beta: None }
    }
}

impl AcquisitionSpec {
    pub fn beta_for(&self, n: usize, d: usize) -> f64 {
        self.beta.unwrap_or_else(|| (2.0 * ((n * n * d).max(2) as f64).ln()).sqrt())
    }
}

/// A differentiable function of the input to be maximized.
pub trait Acquisition: Sync {
    fn dim(&self) -> usize;
    /// Value and gradient at `x`, locating brackets from `hint` when given.
    fn value_grad(&self, x: &[f64], hint: Option<&mut QueryHint>) -> Result<(f64, Vec<f64>)>;
    /// Fresh locality hint for a search, if the acquisition uses one.
    fn new_hint(&self) -> Option<QueryHint> {
        None
    }
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.value_grad(x, None)?.0)
    }
}

/// Acquisition over a model whose mean weights, variance bands and dense `M` are cached.
#[derive(Debug, Clone)]
pub struct ModelAcquisition<'a> {
    model: &'a AdditiveGpModel,
    pub kind: AcquisitionKind,
    pub beta: f64,
    /// Incumbent for EI: the largest observed response.
    pub y_best: f64,
    /// Bracket scan reach for hints.
    pub reach: usize,
}

fn std_normal() -> Normal {
    Normal::standard()
}

impl<'a> ModelAcquisition<'a> {
    pub fn new(model: &'a AdditiveGpModel, spec: &AcquisitionSpec, reach: usize) -> Result<Self> {
        if model.cache.b_y.is_none() || model.cache.var_bands.is_none() || model.cache.m_dense.is_none() {
            return Err(Error::State("acquisition needs mean weights, variance bands and dense M".into()));
        }
        let beta = spec.beta_for(model.n(), model.d_dims());
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::Domain(format!("beta must be finite and non-negative, got {beta}")));
        }
        let y_best = model.y().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { model, kind: spec.kind, beta, y_best, reach })
    }

    pub fn model(&self) -> &AdditiveGpModel {
        self.model
    }

    /// Acquisition value and gradient from a posterior with gradients.
    pub fn compose(&self, p: &Prediction) -> (f64, Vec<f64>) {
        let s = p.var;
        match self.kind {
            AcquisitionKind::Ucb => {
                let sd = s.sqrt();
                let value = p.mean + self.beta * sd;
                let grad = if sd > 0.0 {
                    p.mean_grad.iter().zip(&p.var_grad).map(|(gm, gs)| gm + self.beta * gs / (2.0 * sd)).collect()
                } else {
                    p.mean_grad.clone()
                };
                (value, grad)
            }
            AcquisitionKind::Ei => {
                let delta = p.mean - self.y_best;
                if s <= EI_DEGENERATE_VAR {
                    let grad = if delta > 0.0 { p.mean_grad.clone() } else { vec![0.0; p.mean_grad.len()] };
                    return (delta.max(0.0), grad);
                }
                let sd = s.sqrt();
                let z = delta / sd;
                let n = std_normal();
                let (cdf, pdf) = (n.cdf(z), n.pdf(z));
                let value = delta * cdf + sd * pdf;
                let grad = p.mean_grad.iter().zip(&p.var_grad).map(|(gm, gs)| cdf * gm + pdf * gs / (2.0 * sd)).collect();
                (value, grad)
            }
        }
    }
}

impl Acquisition for ModelAcquisition<'_> {
    fn dim(&self) -> usize {
        self.model.d_dims()
    }

    fn value_grad(&self, x: &[f64], hint: Option<&mut QueryHint>) -> Result<(f64, Vec<f64>)> {
        let p = self.model.predict_with_grad(x, hint)?;
        Ok(self.compose(&p))
    }

    fn new_hint(&self) -> Option<QueryHint> {
        Some(QueryHint::new(self.model.d_dims(), self.reach))
    }
}
