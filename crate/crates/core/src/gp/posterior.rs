//! Posterior mean and variance.
//!
//! With `φ_d = A_d k_d(U_d, x*_d)` the sparse packet basis at a query and `z_d = Φ_d⁻¹ φ_d`,
//!
//! ```text
//! μ(x*) = Σ_d φ_dᵀ b_d,                 b = Φ⁻ᵀ K_sys⁻¹ σ⁻² Wᵀ Y
//! s(x*) = D - Σ_d φ_dᵀ (A_d Φ_dᵀ)⁻¹ φ_d + zᵀ K_sys⁻¹ z
//! ```

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AdditiveGpModel, MAX_DENSE_M};
use crate::error::{Error, Result};
use crate::packets::SparseBasisVector;
use crate::selinv::selected_inverse_band;

/// How the variance terms are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarMode {
    /// Banded term from the selected-inverse cache, coupling term by one Gauss-Seidel solve.
    Banded,
    /// Both terms from caches: the selected-inverse bands and the dense `M`.
    FullM,
    /// No caches: two banded solves per dimension and one Gauss-Seidel solve.
    GsPerQuery,
}

/// Brackets from the previous query, one per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryHint {
    brackets: Vec<isize>,
    /// Intervals scanned either side of the previous bracket before binary search.
    pub reach: usize,
    pub hits: usize,
    pub misses: usize,
}

impl QueryHint {
    pub fn new(d_dims: usize, reach: usize) -> Self {
        Self { brackets: vec![isize::MIN; d_dims], reach, hits: 0, misses: 0 }
    }

    pub fn brackets(&self) -> &[isize] {
        &self.brackets
    }
}

/// Posterior at one point, with x-gradients when requested.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    /// Variance, clamped at zero.
    pub var: f64,
    /// Variance before clamping.
    pub raw_var: f64,
    pub mean_grad: Vec<f64>,
    pub var_grad: Vec<f64>,
}

type Bases = Vec<(SparseBasisVector, Option<SparseBasisVector>)>;

impl AdditiveGpModel {
    /// Packet bases at `x`, one per dimension, reusing and updating `hint` when given.
    /// Hints the cache to load the packet windows and mean weights for `brackets`.
    fn prefetch(&self, brackets: &[isize]) {
        let q = self.nu().q() as isize;
        for (d, (dim, &j)) in self.dims.iter().zip(brackets).enumerate() {
            dim.kp.prefetch(j);
            if let Some(b) = &self.cache.b_y {
                let block = self.block(d);
                let lo = (j - q).clamp(0, dim.len() as isize) as usize;
                let hi = ((j + q + 2).max(0) as usize).min(dim.len());
                crate::banded::prefetch(&b[block], lo..hi);
            }
        }
    }

    pub(super) fn bases(&self, x: &[f64], hint: Option<&mut QueryHint>, with_grad: bool) -> Result<Bases> {
        let x = self.check_point(x)?;
        let mut out = Vec::with_capacity(x.len());
        match hint {
            Some(h) => {
                if h.brackets.len() != x.len() {
                    return Err(Error::DimensionMismatch { expected: x.len(), got: h.brackets.len() });
                }
                for (d, dim) in self.dims.iter().enumerate() {
                    let (j, used) = dim.axis.locate_from(x[d], h.brackets[d], h.reach);
                    debug_assert_eq!(j, dim.axis.locate(x[d]));
                    if used {
                        h.hits += 1;
                    } else {
                        h.misses += 1;
                    }
                    h.brackets[d] = j;
                }
                self.prefetch(&h.brackets);
                for ((dim, &v), &j) in self.dims.iter().zip(x).zip(&h.brackets) {
                    out.push(dim.kp.basis_at(j, v, with_grad));
                }
            }
            None => {
                let brackets: Vec<isize> = self.dims.iter().zip(x).map(|(dim, &v)| dim.axis.locate(v)).collect();
                self.prefetch(&brackets);
                for ((dim, &v), j) in self.dims.iter().zip(x).zip(brackets) {
                    out.push(dim.kp.basis_at(j, v, with_grad));
                }
            }
        }
        Ok(out)
    }

    /// Solves for the posterior-mean weights.
    pub fn compute_mean_weights(&mut self) -> Result<super::GsReport> {
        let inv_s2 = self.sigma_y.powi(-2);
        let u: Vec<f64> = self.gather_all(&self.y).iter().map(|v| v * inv_s2).collect();
        let mut report = self.gs_solve(&u)?;
        let mut b = Vec::with_capacity(u.len());
        for (d, dim) in self.dims.iter().enumerate() {
            b.extend(dim.phi_lu.solve_transpose(&report.solution[self.block(d)])?);
        }
        report.solution = b.clone();
        self.cache.b_y = Some(b);
        Ok(report)
    }

    /// Selected-inverse bands of `A_d Φ_dᵀ` for every dimension.
    pub fn precompute_var_bands(&mut self) -> Result<()> {
        let bands = self
            .dims
            .par_iter()
            .map(|dim| selected_inverse_band(&dim.kp.a, &dim.kp.phi))
            .collect::<Result<Vec<_>>>()?;
        self.cache.var_bands = Some(bands);
        Ok(())
    }

    /// Dense `M = Φ⁻ᵀ K_sys⁻¹ Φ⁻¹` by the Woodbury identity
    ///
    /// ```text
    /// M = blockdiag((A_d Φ_dᵀ)⁻¹) - Pᵀ (σ² I + W K Wᵀ)⁻¹ P,    P = [W_1 A_1⁻¹ … W_D A_D⁻¹]
    /// ```
    ///
    /// with `W K Wᵀ` the additive kernel matrix of the merged rows.
    pub fn precompute_m(&mut self) -> Result<()> {
        let len = self.stacked_len();
        if len > MAX_DENSE_M {
            return Err(Error::TooLarge { limit: MAX_DENSE_M, got: len });
        }
        let n = self.n();
        let g = self.gram_dense()? + DMatrix::identity(n, n) * self.sigma_y.powi(2);
        let chol = g.cholesky().ok_or_else(|| Error::Singular("noisy kernel matrix is not positive definite".into()))?;
        let blocks = self
            .dims
            .par_iter()
            .map(|dim| {
                let m = dim.len();
                let a_inv = dim.a_lu.solve_matrix(&DMatrix::identity(m, m))?;
                let mut h_inv = a_inv.clone();
                for mut col in h_inv.column_iter_mut() {
                    dim.phi_lu.solve_transpose_in_place(col.as_mut_slice())?;
                }
                let p = DMatrix::from_fn(n, m, |i, j| a_inv[(dim.obs[i], j)]);
                Ok((h_inv, p))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut p = DMatrix::zeros(n, len);
        for (d, (_, pd)) in blocks.iter().enumerate() {
            p.view_mut((0, self.offsets[d]), (n, pd.ncols())).copy_from(pd);
        }
        let l = chol.l();
        let y = l.solve_lower_triangular(&p).ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
        let mut m = -y.tr_mul(&y);
        for (d, (h_inv, _)) in blocks.iter().enumerate() {
            let r = self.block(d);
            let mut view = m.view_mut((r.start, r.start), (r.len(), r.len()));
            view += h_inv;
        }
        let mt = m.transpose();
        m += mt;
        m *= 0.5;
        self.cache.m_dense = Some(m);
        Ok(())
    }

    /// Mean weights, selected-inverse bands and (when `with_m`) the dense `M`.
    pub fn build_caches(&mut self, with_m: bool) -> Result<()> {
        self.compute_mean_weights()?;
        self.precompute_var_bands()?;
        if with_m {
            self.precompute_m()?;
        }
        Ok(())
    }

    fn mean_weights(&self) -> Result<&[f64]> {
        self.cache.b_y.as_deref().ok_or_else(|| Error::State("mean weights not computed".into()))
    }

    fn mean_from(&self, bases: &Bases) -> Result<f64> {
        let b = self.mean_weights()?;
        Ok(bases.iter().enumerate().map(|(d, (phi, _))| phi.dot(&b[self.block(d)])).sum())
    }

    /// Posterior mean at `x`.
    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        self.mean_weights()?;
        let bases = self.bases(x, None, false)?;
        self.mean_from(&bases)
    }

    /// Posterior mean at `x`, locating brackets from the previous query.
    pub fn predict_mean_hinted(&self, x: &[f64], hint: &mut QueryHint) -> Result<f64> {
        self.mean_weights()?;
        let bases = self.bases(x, Some(hint), false)?;
        self.mean_from(&bases)
    }

    /// `Σ_d φ_dᵀ (A_d Φ_dᵀ)⁻¹ φ_d` from the cached bands.
    pub(super) fn banded_term(&self, bases: &Bases) -> Result<f64> {
        let bands = self.cache.var_bands.as_ref().ok_or_else(|| Error::State("variance bands not computed".into()))?;
        Ok(bases.iter().zip(bands).map(|((phi, _), w)| w.quad_form(phi.start, &phi.coeffs)).sum())
    }

    /// Stacked `z = Φ⁻¹ φ` and `Σ_d zᵀ A_d⁻¹ φ_d`.
    pub(super) fn solved_terms(&self, bases: &Bases, with_banded: bool) -> Result<(Vec<f64>, f64)> {
        let mut z = Vec::with_capacity(self.stacked_len());
        let mut banded = 0.0;
        for ((phi, _), dim) in bases.iter().zip(&self.dims) {
            let dense = phi.to_dense(dim.len());
            let zd = dim.phi_lu.solve(&dense)?;
            if with_banded {
                let ad = dim.a_lu.solve(&dense)?;
                banded += zd.iter().zip(&ad).map(|(a, b)| a * b).sum::<f64>();
            }
            z.extend(zd);
        }
        Ok((z, banded))
    }

    fn dense_m(&self) -> Result<&DMatrix<f64>> {
        self.cache.m_dense.as_ref().ok_or_else(|| Error::State("dense M not computed".into()))
    }

    /// `uᵀ M_{dd'} v` for windows `u` of dimension `d` and `v` of dimension `d'`.
    fn m_bilinear(m: &DMatrix<f64>, r0: usize, u: &[f64], c0: usize, v: &[f64]) -> f64 {
        let mut s = 0.0;
        for (b, vb) in v.iter().enumerate() {
            let col = m.column(c0 + b);
            let col = &col.as_slice()[r0..r0 + u.len()];
            s += vb * col.iter().zip(u).map(|(x, y)| x * y).sum::<f64>();
        }
        s
    }

    fn variance_from(&self, bases: &Bases, mode: VarMode) -> Result<f64> {
        let prior = self.d_dims() as f64;
        let (banded, coupling) = match mode {
            VarMode::FullM => {
                let m = self.dense_m()?;
                let banded = self.banded_term(bases)?;
                let mut coupling = 0.0;
                for (d, (pd, _)) in bases.iter().enumerate() {
                    for (e, (pe, _)) in bases.iter().enumerate() {
                        coupling += Self::m_bilinear(
                            m,
                            self.offsets[d] + pd.start,
                            &pd.coeffs,
                            self.offsets[e] + pe.start,
                            &pe.coeffs,
                        );
                    }
                }
                (banded, coupling)
            }
            VarMode::Banded => {
                let banded = self.banded_term(bases)?;
                let (z, _) = self.solved_terms(bases, false)?;
                let w = self.gs_solve(&z)?.solution;
                (banded, z.iter().zip(&w).map(|(a, b)| a * b).sum())
            }
            VarMode::GsPerQuery => {
                let (z, banded) = self.solved_terms(bases, true)?;
                let w = self.gs_solve(&z)?.solution;
                (banded, z.iter().zip(&w).map(|(a, b)| a * b).sum())
            }
        };
        Ok(prior - banded + coupling)
    }

    fn clamp(&self, s: f64) -> f64 {
        if s < 0.0 {
            self.record_clamp();
            0.0
        } else {
            s
        }
    }

    /// Posterior variance at `x`, clamped at zero.
    pub fn predict_var(&self, x: &[f64], mode: VarMode) -> Result<f64> {
        let bases = self.bases(x, None, false)?;
        Ok(self.clamp(self.variance_from(&bases, mode)?))
    }

    /// Posterior variance at `x`, locating brackets from the previous query.
    pub fn predict_var_hinted(&self, x: &[f64], mode: VarMode, hint: &mut QueryHint) -> Result<f64> {
        let bases = self.bases(x, Some(hint), false)?;
        Ok(self.clamp(self.variance_from(&bases, mode)?))
    }

    /// Mean and variance sharing one basis evaluation.
    pub fn predict(&self, x: &[f64], mode: VarMode, hint: Option<&mut QueryHint>) -> Result<Prediction> {
        let bases = self.bases(x, hint, false)?;
        let mean = self.mean_from(&bases)?;
        let raw_var = self.variance_from(&bases, mode)?;
        Ok(Prediction { mean, var: self.clamp(raw_var), raw_var, mean_grad: vec![], var_grad: vec![] })
    }

    /// Mean, variance and their x-gradients from the cached bands and dense `M`:
    ///
    /// ```text
    /// ∂μ/∂x_d = g_dᵀ b_d
    /// ∂s/∂x_d = -2 g_dᵀ (A_d Φ_dᵀ)⁻¹ φ_d + 2 Σ_d' g_dᵀ M_dd' φ_d'
    /// ```
    ///
    /// with `g_d = ∂φ_d/∂x_d`.
    pub fn predict_with_grad(&self, x: &[f64], hint: Option<&mut QueryHint>) -> Result<Prediction> {
        let bases = self.bases(x, hint, true)?;
        let mean = self.mean_from(&bases)?;
        let raw_var = self.variance_from(&bases, VarMode::FullM)?;
        let b = self.mean_weights()?;
        let bands = self.cache.var_bands.as_ref().ok_or_else(|| Error::State("variance bands not computed".into()))?;
        let m = self.dense_m()?;
        let mut mean_grad = Vec::with_capacity(bases.len());
        let mut var_grad = Vec::with_capacity(bases.len());
        for (d, (pd, gd)) in bases.iter().enumerate() {
            let gd = gd.as_ref().expect("gradient basis requested");
            mean_grad.push(gd.dot(&b[self.block(d)]));
            let mut dv = -2.0 * bands[d].bilinear(gd.start, &gd.coeffs, pd.start, &pd.coeffs);
            for (e, (pe, _)) in bases.iter().enumerate() {
                dv += 2.0
                    * Self::m_bilinear(m, self.offsets[d] + gd.start, &gd.coeffs, self.offsets[e] + pe.start, &pe.coeffs);
            }
            var_grad.push(dv);
        }
        Ok(Prediction { mean, var: self.clamp(raw_var), raw_var, mean_grad, var_grad })
    }
}
