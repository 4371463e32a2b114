//! Selected inversion: the band of `(A Φᵀ)⁻¹ = Φ⁻ᵀ A⁻¹` without forming the inverse.
//!
//! `H = A Φᵀ` is symmetric positive definite with bandwidth `b`. Partitioned into `b × b` blocks it is
//! block tridiagonal, and the diagonal and first off-diagonal blocks of `H⁻¹` follow from a forward
//! Schur-complement sweep and a backward sweep:
//!
//! ```text
//! S_1 = H_11,  S_j = H_jj - H_j,j-1 S_j-1⁻¹ H_j-1,j
//! M_I = S_I⁻¹
//! M_j,j+1 = -S_j⁻¹ H_j,j+1 M_j+1
//! M_j = S_j⁻¹ - S_j⁻¹ H_j,j+1 M_j,j+1ᵀ
//! ```

use nalgebra::DMatrix;

use crate::banded::BandedMatrix;
use crate::error::{Error, Result};

/// Condition number above which a Schur block triggers the column-solve fallback.
const BLOCK_COND_LIMIT: f64 = 1e12;

/// Block-tridiagonal part of a symmetric inverse: diagonal blocks `M_j` and super-diagonal blocks
/// `M_j⁺`. Sub-diagonal blocks are served as `M_j⁻ = (M_{j-1}⁺)ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandWindow {
    n: usize,
    block: usize,
    diag: Vec<DMatrix<f64>>,
    upper: Vec<DMatrix<f64>>,
    /// True when the blocks were filled from banded solves against unit vectors.
    pub used_fallback: bool,
}

impl BandWindow {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Block size, equal to the bandwidth of `H`.
    pub fn block_size(&self) -> usize {
        self.block
    }

    pub fn num_blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn diag_block(&self, j: usize) -> &DMatrix<f64> {
        &self.diag[j]
    }

    /// `M_j⁺`, coupling block `j` to block `j + 1`.
    pub fn upper_block(&self, j: usize) -> &DMatrix<f64> {
        &self.upper[j]
    }

    /// `M_j⁻ = (M_{j-1}⁺)ᵀ`, for `j >= 1`.
    pub fn lower_block(&self, j: usize) -> DMatrix<f64> {
        self.upper[j - 1].transpose()
    }

    /// Entry `(i, j)` of the inverse when it lies in the stored block-tridiagonal pattern.
    /// Every entry with `|i - j| <= block_size()` is available.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let b = self.block;
        let (bi, bj) = (i / b, j / b);
        let (ri, rj) = (i - bi * b, j - bj * b);
        if i >= self.n || j >= self.n {
            None
        } else if bi == bj {
            Some(self.diag[bi][(ri, rj)])
        } else if bj == bi + 1 {
            Some(self.upper[bi][(ri, rj)])
        } else if bi == bj + 1 {
            Some(self.upper[bj][(rj, ri)])
        } else {
            None
        }
    }

    /// `vᵀ M v` for a vector supported on `start .. start + v.len()`, which must span at most
    /// `block_size() + 1` indices.
    #[inline]
    pub fn quad_form(&self, start: usize, v: &[f64]) -> f64 {
        let mut s = 0.0;
        for (a, va) in v.iter().enumerate() {
            if *va == 0.0 {
                continue;
            }
            let i = start + a;
            let mut row = 0.0;
            for (c, vc) in v.iter().enumerate() {
                row += self.get(i, start + c).expect("window wider than the stored band") * vc;
            }
            s += va * row;
        }
        s
    }

    /// `uᵀ M v` for windows `u` at `su` and `v` at `sv` lying within the stored band of each other.
    #[inline]
    pub fn bilinear(&self, su: usize, u: &[f64], sv: usize, v: &[f64]) -> f64 {
        let mut s = 0.0;
        for (a, ua) in u.iter().enumerate() {
            if *ua == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for (c, vc) in v.iter().enumerate() {
                row += self.get(su + a, sv + c).expect("window wider than the stored band") * vc;
            }
            s += ua * row;
        }
        s
    }

    /// The stored band of half-width `bw` as a banded matrix.
    pub fn to_banded(&self, bw: usize) -> BandedMatrix {
        assert!(bw <= self.block, "requested band exceeds the stored pattern");
        BandedMatrix::from_fn(self.n, bw, bw, |i, j| self.get(i, j).unwrap_or(0.0))
    }
}

/// Band of `(a · phiᵀ)⁻¹`.
pub fn selected_inverse_band(a: &BandedMatrix, phi: &BandedMatrix) -> Result<BandWindow> {
    let h = a.matmul(&phi.transpose())?;
    selected_inverse_of(&h)
}

/// Block-tridiagonal part of `h⁻¹` for a symmetric positive definite banded `h`.
pub fn selected_inverse_of(h: &BandedMatrix) -> Result<BandWindow> {
    let n = h.n();
    if n == 0 {
        return Err(Error::Size { needed: 1, got: 0 });
    }
    let b = h.lower_bw().max(h.upper_bw()).clamp(1, n);
    // Sweep on the symmetrized unit-diagonal scaling D H D, whose conditioning is far better
    // than that of H.
    let diag: Vec<f64> = (0..n).map(|i| h.get(i, i)).collect();
    if diag.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return column_fallback(h, b);
    }
    let dscale: Vec<f64> = diag.iter().map(|v| 1.0 / v.sqrt()).collect();
    let scaled = BandedMatrix::from_fn(n, h.lower_bw(), h.upper_bw(), |i, j| {
        0.5 * (h.get(i, j) + h.get(j, i)) * dscale[i] * dscale[j]
    });
    match schur_sweep(&scaled, b) {
        Some(mut w) => {
            unscale(&mut w, &dscale);
            Ok(w)
        }
        None => column_fallback(h, b),
    }
}

/// `D M D` applied block by block.
fn unscale(w: &mut BandWindow, d: &[f64]) {
    let (b, n) = (w.block, w.n);
    for (j, m) in w.diag.iter_mut().enumerate() {
        let r = block_range(j, b, n);
        for ((rr, cc), v) in m.iter_mut().enumerate().map(|(k, v)| ((k % r.len(), k / r.len()), v)) {
            *v *= d[r.start + rr] * d[r.start + cc];
        }
    }
    for (j, m) in w.upper.iter_mut().enumerate() {
        let r = block_range(j, b, n);
        let c = block_range(j + 1, b, n);
        for ((rr, cc), v) in m.iter_mut().enumerate().map(|(k, v)| ((k % r.len(), k / r.len()), v)) {
            *v *= d[r.start + rr] * d[c.start + cc];
        }
    }
}

fn block_range(j: usize, b: usize, n: usize) -> std::ops::Range<usize> {
    j * b..((j + 1) * b).min(n)
}

fn dense_block(h: &BandedMatrix, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| h.get(rows.start + r, cols.start + c))
}

/// Inverse of a symmetric positive definite block, or `None` when it is indefinite or too
/// ill-conditioned to trust.
fn spd_inverse(s: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let sym = (s + s.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let (lo, hi) = eig.eigenvalues.iter().fold((f64::INFINITY, 0.0_f64), |(l, h), &e| (l.min(e), h.max(e.abs())));
    if !(lo > 0.0) || hi / lo > BLOCK_COND_LIMIT {
        return None;
    }
    let inv = sym.cholesky()?.inverse();
    Some((&inv + inv.transpose()) * 0.5)
}

fn schur_sweep(h: &BandedMatrix, b: usize) -> Option<BandWindow> {
    let n = h.n();
    let nb = n.div_ceil(b);
    let mut s_inv: Vec<DMatrix<f64>> = Vec::with_capacity(nb);
    let mut h_up: Vec<DMatrix<f64>> = Vec::with_capacity(nb.saturating_sub(1));
    for j in 0..nb {
        let rj = block_range(j, b, n);
        let mut s = dense_block(h, rj.clone(), rj.clone());
        if j > 0 {
            let hl = dense_block(h, rj.clone(), block_range(j - 1, b, n));
            s -= &hl * &s_inv[j - 1] * &h_up[j - 1];
        }
        s_inv.push(spd_inverse(&s)?);
        if j + 1 < nb {
            h_up.push(dense_block(h, rj, block_range(j + 1, b, n)));
        }
    }
    let mut diag = vec![DMatrix::zeros(0, 0); nb];
    let mut upper = vec![DMatrix::zeros(0, 0); nb.saturating_sub(1)];
    diag[nb - 1] = s_inv[nb - 1].clone();
    for j in (0..nb.saturating_sub(1)).rev() {
        let t = &s_inv[j] * &h_up[j];
        let mp = -(&t * &diag[j + 1]);
        let mj = &s_inv[j] - &t * mp.transpose();
        diag[j] = (&mj + mj.transpose()) * 0.5;
        upper[j] = mp;
    }
    Some(BandWindow { n, block: b, diag, upper, used_fallback: false })
}

/// Fills the blocks by banded LU solves against unit vectors: `O(n² b)`, used only when a Schur
/// block is numerically unreliable.
fn column_fallback(h: &BandedMatrix, b: usize) -> Result<BandWindow> {
    let n = h.n();
    let nb = n.div_ceil(b);
    let lu = h.lu().map_err(|e| Error::Conditioning(format!("selected inversion fallback failed: {e}")))?;
    let mut cols = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for c in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[c] = 1.0;
        lu.solve_in_place(&mut e)?;
        let lo = c.saturating_sub(2 * b);
        let hi = (c + 2 * b + 1).min(n);
        for r in lo..hi {
            cols[(r, c)] = e[r];
        }
    }
    let sym = (&cols + cols.transpose()) * 0.5;
    let diag = (0..nb)
        .map(|j| {
            let r = block_range(j, b, n);
            sym.view((r.start, r.start), (r.len(), r.len())).into_owned()
        })
        .collect();
    let upper = (0..nb.saturating_sub(1))
        .map(|j| {
            let r = block_range(j, b, n);
            let c = block_range(j + 1, b, n);
            sym.view((r.start, c.start), (r.len(), c.len())).into_owned()
        })
        .collect();
    Ok(BandWindow { n, block: b, diag, upper, used_fallback: true })
}
