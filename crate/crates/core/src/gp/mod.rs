//! Additive Matérn GP regression on per-dimension kernel-packet factorizations.
//!
//! Coordinates that repeat along one axis are merged into a single axis point. Observation `i`
//! maps to axis point `obs[i]` of dimension `d`, which defines the `n × m_d` incidence matrix `W_d`
//! with `W_dᵀ W_d = C_d = diag(counts)`. All stacked vectors are ordered by dimension and, within
//! a dimension, by sorted axis position. The central system is
//!
//! ```text
//! K_sys = blockdiag(K_d⁻¹) + σ⁻² Wᵀ W,    K_d⁻¹ = Φ_d⁻¹ A_d
//! ```
//!
//! which reduces to `K⁻¹ + σ⁻² S Sᵀ` when no coordinate repeats.

mod gauss_seidel;
mod likelihood;
mod posterior;
mod persist;
mod train;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::banded::BandedLu;
use crate::error::{Error, Result};
use crate::matern::{HalfIntegerSmoothness, KernelParams};
use crate::packets::{grad_factorize, kp_factorize, GradFactor, KpFactor, SortedAxis};
use crate::selinv::BandWindow;

pub use gauss_seidel::{GsOptions, GsReport};
pub use persist::FORMAT_VERSION;
pub use likelihood::{GradReport, LikelihoodReport, LogdetMode, TraceMode};
pub use posterior::{Prediction, QueryHint, VarMode};
pub use train::{train, TrainOptions, TrainReport};

/// Largest stacked dimension for which the dense `M` is built.
pub const MAX_DENSE_M: usize = 5000;

/// Per-dimension state: merged axis, incidence map and factorizations.
#[derive(Debug, Clone)]
pub struct DimState {
    axis: SortedAxis,
    obs: Vec<usize>,
    counts: Vec<f64>,
    kp: KpFactor,
    a_lu: BandedLu,
    phi_lu: BandedLu,
    /// `σ² A + Φ C`.
    sys_lu: BandedLu,
    grad: OnceLock<GradDim>,
}

#[derive(Debug, Clone)]
struct GradDim {
    factor: GradFactor,
    b_lu: BandedLu,
}

impl DimState {
    fn build(axis: SortedAxis, obs: Vec<usize>, counts: Vec<f64>, params: KernelParams, sigma: f64) -> Result<Self> {
        let kp = kp_factorize(&axis, &params)?;
        let a_lu = kp.a.lu()?;
        let phi_lu = kp.phi.lu()?;
        let sys = kp.a.add_scaled(sigma * sigma, &kp.phi.scale_columns(&counts), 1.0)?;
        let sys_lu = sys.lu()?;
        Ok(Self { axis, obs, counts, kp, a_lu, phi_lu, sys_lu, grad: OnceLock::new() })
    }

    fn refit(&self, params: KernelParams, sigma: f64) -> Result<Self> {
        Self::build(self.axis.clone(), self.obs.clone(), self.counts.clone(), params, sigma)
    }

    pub fn axis(&self) -> &SortedAxis {
        &self.axis
    }

    pub fn kp(&self) -> &KpFactor {
        &self.kp
    }

    /// Number of distinct coordinates `m_d`.
    pub fn len(&self) -> usize {
        self.axis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axis.is_empty()
    }

    /// Axis position of every observation.
    pub fn obs(&self) -> &[usize] {
        &self.obs
    }

    /// Multiplicity of every axis point.
    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    fn grad(&self) -> Result<&GradDim> {
        if let Some(g) = self.grad.get() {
            return Ok(g);
        }
        let factor = grad_factorize(&self.axis, &self.kp.params)?;
        let b_lu = factor.b.lu()?;
        let _ = self.grad.set(GradDim { factor, b_lu });
        Ok(self.grad.get().expect("grad factor set"))
    }

    /// `Ψ`/`B` factorization of `∂K/∂ω`, built on first use.
    pub fn grad_factor(&self) -> Result<&GradFactor> {
        Ok(&self.grad()?.factor)
    }

    /// `W_d v`: axis values spread to observations.
    fn scatter(&self, v: &[f64], out: &mut [f64]) {
        for (o, &k) in out.iter_mut().zip(&self.obs) {
            *o = v[k];
        }
    }

    /// `out += W_d v`.
    fn scatter_add(&self, v: &[f64], out: &mut [f64]) {
        for (o, &k) in out.iter_mut().zip(&self.obs) {
            *o += v[k];
        }
    }

    /// `W_dᵀ s`: observation values summed per axis point.
    fn gather(&self, s: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (&k, v) in self.obs.iter().zip(s) {
            out[k] += v;
        }
        out
    }
}

/// Caches for prediction.
#[derive(Debug, Clone, Default)]
pub struct PredictionCache {
    /// Stacked `Φ⁻ᵀ K_sys⁻¹ σ⁻² Wᵀ Y`.
    pub b_y: Option<Vec<f64>>,
    /// Band of `Φ_d⁻ᵀ A_d⁻¹` per dimension.
    pub var_bands: Option<Vec<BandWindow>>,
    /// Dense symmetric `Φ⁻ᵀ K_sys⁻¹ Φ⁻¹` over the stacked coordinates.
    pub m_dense: Option<DMatrix<f64>>,
}

#[derive(Debug, Default)]
struct Counter(AtomicUsize);

impl Clone for Counter {
    fn clone(&self) -> Self {
        Self(AtomicUsize::new(self.0.load(Ordering::Relaxed)))
    }
}

/// Additive GP with `D` one-dimensional Matérn components of common smoothness.
#[derive(Debug, Clone)]
pub struct AdditiveGpModel {
    nu: HalfIntegerSmoothness,
    omegas: Vec<f64>,
    sigma_y: f64,
    /// Row-major `n × D` inputs after merging repeated rows.
    x: Vec<f64>,
    y: Vec<f64>,
    dims: Vec<DimState>,
    /// Start of each dimension's block in stacked vectors; `offsets[D]` is the total length.
    offsets: Vec<usize>,
    merged_rows: usize,
    pub gs: GsOptions,
    pub cache: PredictionCache,
    clamps: Counter,
}

/// Merges identical rows of `x`, averaging their responses, in order of first appearance.
fn merge_rows(x: &[f64], y: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::with_capacity(y.len());
    let mut xs = Vec::with_capacity(x.len());
    let mut sums: Vec<f64> = Vec::with_capacity(y.len());
    let mut counts: Vec<f64> = Vec::with_capacity(y.len());
    for (row, &yi) in x.chunks_exact(d).zip(y) {
        // Adding 0.0 maps -0.0 to 0.0 so both hash alike.
        let key: Vec<u64> = row.iter().map(|v| (v + 0.0).to_bits()).collect();
        match index.get(&key) {
            Some(&k) => {
                sums[k] += yi;
                counts[k] += 1.0;
            }
            None => {
                index.insert(key, sums.len());
                xs.extend(row.iter().map(|v| v + 0.0));
                sums.push(yi);
                counts.push(1.0);
            }
        }
    }
    let ys = sums.iter().zip(&counts).map(|(s, c)| s / c).collect();
    (xs, ys)
}

/// Distinct sorted values of one column, the position of each row's value, and multiplicities.
fn merge_axis(col: &[f64]) -> Result<(SortedAxis, Vec<usize>, Vec<f64>)> {
    let mut order: Vec<usize> = (0..col.len()).collect();
    order.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
    let mut values: Vec<f64> = Vec::new();
    let mut counts: Vec<f64> = Vec::new();
    let mut obs = vec![0; col.len()];
    for &i in &order {
        if values.last() != Some(&col[i]) {
            values.push(col[i]);
            counts.push(0.0);
        }
        *counts.last_mut().expect("non-empty") += 1.0;
        obs[i] = values.len() - 1;
    }
    Ok((SortedAxis::from_sorted(values)?, obs, counts))
}

impl AdditiveGpModel {
    /// Builds the model from row-major inputs `x` (`n × D`, with `D = omegas.len()`) and responses `y`.
    pub fn assemble(
        x: &[f64],
        y: &[f64],
        nu: HalfIntegerSmoothness,
        omegas: &[f64],
        sigma_y: f64,
    ) -> Result<Self> {
        let d = omegas.len();
        if d == 0 {
            return Err(Error::Domain("at least one input dimension is required".into()));
        }
        if x.len() != y.len() * d {
            return Err(Error::DimensionMismatch { expected: y.len() * d, got: x.len() });
        }
        if let Some(v) = x.iter().chain(y).find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("data value {v}")));
        }
        if !(sigma_y > 0.0 && sigma_y.is_finite()) {
            return Err(Error::Domain(format!("sigma_y must be positive, got {sigma_y}")));
        }
        let params: Vec<KernelParams> = omegas.iter().map(|&w| KernelParams::new(nu, w)).collect::<Result<_>>()?;
        let n_raw = y.len();
        let (x, y) = merge_rows(x, y, d);
        let n = y.len();
        // Gradient factors need two more points; their size is checked when first built.
        let needed = 2 * nu.q() + 3;
        if n < needed {
            return Err(Error::Size { needed, got: n });
        }
        let dims = (0..d)
            .into_par_iter()
            .map(|k| {
                let col: Vec<f64> = x.iter().skip(k).step_by(d).copied().collect();
                let (axis, obs, counts) = merge_axis(&col)?;
                if axis.len() < needed {
                    return Err(Error::Size { needed, got: axis.len() });
                }
                DimState::build(axis, obs, counts, params[k], sigma_y)
            })
            .collect::<Result<Vec<_>>>()?;
        let merged_rows = n_raw - n;
        let mut model = Self {
            nu,
            omegas: omegas.to_vec(),
            sigma_y,
            x,
            y,
            offsets: Vec::new(),
            dims,
            merged_rows,
            gs: GsOptions::default(),
            cache: PredictionCache::default(),
            clamps: Counter::default(),
        };
        model.offsets = std::iter::once(0)
            .chain(model.dims.iter().scan(0, |acc, s| {
                *acc += s.len();
                Some(*acc)
            }))
            .collect();
        Ok(model)
    }

    /// Same data with new length-scales; caches are dropped.
    pub fn refit(&self, omegas: &[f64]) -> Result<Self> {
        if omegas.len() != self.dims.len() {
            return Err(Error::DimensionMismatch { expected: self.dims.len(), got: omegas.len() });
        }
        let params: Vec<KernelParams> =
            omegas.iter().map(|&w| KernelParams::new(self.nu, w)).collect::<Result<_>>()?;
        let dims = self
            .dims
            .par_iter()
            .zip(&params)
            .map(|(s, p)| s.refit(*p, self.sigma_y))
            .collect::<Result<Vec<_>>>()?;
        let mut out = self.clone_without_dims();
        out.omegas = omegas.to_vec();
        out.dims = dims;
        Ok(out)
    }

    fn clone_without_dims(&self) -> Self {
        Self {
            nu: self.nu,
            omegas: self.omegas.clone(),
            sigma_y: self.sigma_y,
            x: self.x.clone(),
            y: self.y.clone(),
            dims: Vec::new(),
            offsets: self.offsets.clone(),
            merged_rows: self.merged_rows,
            gs: self.gs,
            cache: PredictionCache::default(),
            clamps: Counter::default(),
        }
    }

    pub fn nu(&self) -> HalfIntegerSmoothness {
        self.nu
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn sigma_y(&self) -> f64 {
        self.sigma_y
    }

    /// Number of input dimensions `D`.
    pub fn d_dims(&self) -> usize {
        self.dims.len()
    }

    /// Number of observations after merging repeated rows.
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Rows removed by merging repeated inputs.
    pub fn merged_rows(&self) -> usize {
        self.merged_rows
    }

    /// Row-major inputs after merging.
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn dims(&self) -> &[DimState] {
        &self.dims
    }

    pub fn dim(&self, d: usize) -> &DimState {
        &self.dims[d]
    }

    /// Length of stacked vectors, `Σ_d m_d`.
    pub fn stacked_len(&self) -> usize {
        self.offsets[self.dims.len()]
    }

    /// Index range of dimension `d` in stacked vectors.
    pub fn block(&self, d: usize) -> std::ops::Range<usize> {
        self.offsets[d]..self.offsets[d + 1]
    }

    /// Number of variance evaluations clamped at zero so far.
    pub fn clamp_count(&self) -> usize {
        self.clamps.0.load(Ordering::Relaxed)
    }

    fn record_clamp(&self) {
        self.clamps.0.fetch_add(1, Ordering::Relaxed);
    }

    /// `Σ_d W_d v_d` for a stacked `v`.
    fn scatter_all(&self, v: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.n()];
        for (d, dim) in self.dims.iter().enumerate() {
            dim.scatter_add(&v[self.block(d)], &mut s);
        }
        s
    }

    /// Stacked `Wᵀ s`.
    fn gather_all(&self, s: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.stacked_len());
        for dim in &self.dims {
            out.extend(dim.gather(s));
        }
        out
    }

    /// `K_sys v` for a stacked `v`.
    pub fn apply_ksys(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        let len = self.stacked_len();
        if v.len() != len || out.len() != len {
            return Err(Error::DimensionMismatch { expected: len, got: v.len().min(out.len()) });
        }
        let s = self.scatter_all(v);
        let inv_s2 = self.sigma_y.powi(-2);
        for (d, dim) in self.dims.iter().enumerate() {
            let r = self.block(d);
            let mut kv = dim.kp.a.matvec(&v[r.clone()])?;
            dim.phi_lu.solve_in_place(&mut kv)?;
            let ws = dim.gather(&s);
            for ((o, a), b) in out[r].iter_mut().zip(&kv).zip(&ws) {
                *o = a + inv_s2 * b;
            }
        }
        Ok(())
    }

    /// Dense `K_sys` built column by column.
    pub fn ksys_dense(&self) -> Result<DMatrix<f64>> {
        let len = self.stacked_len();
        if len > MAX_DENSE_M {
            return Err(Error::TooLarge { limit: MAX_DENSE_M, got: len });
        }
        let cols: Vec<Vec<f64>> = (0..len)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![0.0; len];
                e[j] = 1.0;
                let mut out = vec![0.0; len];
                self.apply_ksys(&e, &mut out)?;
                Ok(out)
            })
            .collect::<Result<_>>()?;
        let mut m = DMatrix::from_fn(len, len, |i, j| cols[j][i]);
        let mt = m.transpose();
        m += mt;
        m *= 0.5;
        Ok(m)
    }

    /// Dense additive kernel matrix `Σ_d W_d K_d W_dᵀ` over the merged rows.
    pub fn gram_dense(&self) -> Result<DMatrix<f64>> {
        let n = self.n();
        if n > MAX_DENSE_M {
            return Err(Error::TooLarge { limit: MAX_DENSE_M, got: n });
        }
        let params = self.omegas.iter().map(|w| KernelParams::new(self.nu, *w)).collect::<Result<Vec<_>>>()?;
        let d = self.d_dims();
        Ok(DMatrix::from_fn(n, n, |i, j| {
            params.iter().enumerate().map(|(e, p)| p.eval_at(self.x[i * d + e], self.x[j * d + e])).sum()
        }))
    }

    /// `Σ_d (log|Φ_d| - log|A_d|) = log|K|` over the merged axes.
    pub fn log_det_k(&self) -> f64 {
        self.dims.iter().map(|s| s.phi_lu.logdet().0 - s.a_lu.logdet().0).sum()
    }

    /// Checks a query point and returns it as a slice.
    fn check_point<'a>(&self, x: &'a [f64]) -> Result<&'a [f64]> {
        if x.len() != self.d_dims() {
            return Err(Error::DimensionMismatch { expected: self.d_dims(), got: x.len() });
        }
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("query coordinate {v}")));
        }
        Ok(x)
    }
}
