//! Kernel packets: compactly supported combinations of translated Matérn kernels, and the
//! banded factorizations `A K = Φ` and `B ∂K/∂ω = Ψ` built from them.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::banded::BandedMatrix;
use crate::error::{Error, Result};
use crate::matern::{HalfIntegerSmoothness, KernelParams};

/// Below this value of `omega * half_width` the moment system is built from a Taylor-series basis.
const SERIES_THRESHOLD: f64 = 2.0;
/// Extra Taylor terms beyond the system order.
const SERIES_TERMS: usize = 56;
/// Ratio of second-smallest to largest singular value below which the nullspace is not unique.
const RANK_TOL: f64 = 1e-10;

/// Data coordinates of one dimension in increasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedAxis {
    values: Vec<f64>,
    /// `perm[i]` is the sorted position of original point `i`.
    perm: Vec<usize>,
    index: BucketIndex,
}

/// Equal-width buckets over `[values[0], values[n-1]]`; `starts[b]` counts the values whose
/// bucket is below `b`. Bucketing is monotone, so a search can be confined to one bucket.
#[derive(Debug, Clone, PartialEq)]
struct BucketIndex {
    lo: f64,
    scale: f64,
    starts: Vec<usize>,
}

impl BucketIndex {
    fn new(values: &[f64]) -> Self {
        let n = values.len();
        let (lo, hi) = match (values.first(), values.last()) {
            (Some(&lo), Some(&hi)) => (lo, hi),
            _ => return Self { lo: 0.0, scale: 0.0, starts: vec![0, 0] },
        };
        let scale = if hi > lo { n as f64 / (hi - lo) } else { 0.0 };
        let mut index = Self { lo, scale, starts: vec![0; n + 1] };
        for &v in values {
            let b = index.bucket(v);
            index.starts[b + 1] += 1;
        }
        for b in 1..=n {
            index.starts[b] += index.starts[b - 1];
        }
        index
    }

    #[inline]
    fn bucket(&self, x: f64) -> usize {
        (((x - self.lo) * self.scale) as usize).min(self.starts.len() - 2)
    }
}

impl SortedAxis {
    /// Sorts the coordinates. Duplicates and non-finite values are rejected.
    pub fn new(xs: &[f64]) -> Result<Self> {
        if let Some(x) = xs.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("axis coordinate {x}")));
        }
        let mut order: Vec<usize> = (0..xs.len()).collect();
        order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
        let values: Vec<f64> = order.iter().map(|&i| xs[i]).collect();
        if let Some(w) = values.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Precondition(format!("duplicate axis coordinate {}", w[0])));
        }
        let mut perm = vec![0; xs.len()];
        for (sorted, &orig) in order.iter().enumerate() {
            perm[orig] = sorted;
        }
        let index = BucketIndex::new(&values);
        Ok(Self { values, perm, index })
    }

    /// Wraps values that are already strictly increasing.
    pub fn from_sorted(values: Vec<f64>) -> Result<Self> {
        if let Some(x) = values.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("axis coordinate {x}")));
        }
        if let Some(w) = values.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Precondition(format!("axis not strictly increasing at {}", w[0])));
        }
        let perm = (0..values.len()).collect();
        let index = BucketIndex::new(&values);
        Ok(Self { values, perm, index })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of coordinates `<= x`, minus one: `-1` left of the axis, `n - 1` at or right of the last.
    #[inline]
    pub fn locate(&self, x: f64) -> isize {
        if !(x >= self.index.lo) || self.values.is_empty() {
            return -1;
        }
        let b = self.index.bucket(x);
        let (start, end) = (self.index.starts[b], self.index.starts[b + 1]);
        (start + self.values[start..end].partition_point(|&v| v <= x)) as isize - 1
    }

    /// `locate`, starting from a previous bracket `hint`. Checks the hinted interval, then scans
    /// up to `reach` intervals either side, then falls back to binary search.
    /// The second return value reports whether the hint was used.
    #[inline]
    pub fn locate_from(&self, x: f64, hint: isize, reach: usize) -> (isize, bool) {
        let n = self.values.len() as isize;
        let brackets = |j: isize| {
            (j < 0 || self.values[j as usize] <= x) && (j + 1 >= n || x < self.values[(j + 1) as usize])
        };
        if (-1..n).contains(&hint) {
            for step in 0..=reach as isize {
                for j in [hint + step, hint - step] {
                    if (-1..n).contains(&j) && brackets(j) {
                        return (j, true);
                    }
                }
            }
        }
        (self.locate(x), false)
    }

    /// Smallest gap between consecutive coordinates (infinite for fewer than two points).
    pub fn min_spacing(&self) -> f64 {
        self.values.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KpKind {
    /// Vanishes outside the window on both sides.
    Central,
    /// Vanishes to the right of the window; used for the first rows of the factorization.
    Left,
    /// Vanishes to the left of the window; used for the last rows.
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KpOrder {
    /// Packets of the kernel itself.
    Base,
    /// Packets of the ω-derivative of the kernel (the Matérn-(ν+1) coefficients).
    Grad,
}

/// Coefficients of a kernel packet on `window`.
///
/// Returns the unit-norm vector spanning the nullspace of the moment system, with its first
/// non-negligible entry positive.
pub fn solve_kp_coeffs(
    window: &[f64],
    omega: f64,
    nu: HalfIntegerSmoothness,
    kind: KpKind,
    order: KpOrder,
) -> Result<Vec<f64>> {
    let q = match order {
        KpOrder::Base => nu.q(),
        KpOrder::Grad => nu.q() + 1,
    };
    let p = window.len();
    let ok = match kind {
        KpKind::Central => p == 2 * q + 3,
        KpKind::Left | KpKind::Right => (q + 2..=2 * q + 2).contains(&p),
    };
    if !ok {
        return Err(Error::Precondition(format!("window of {p} points does not fit a {kind:?} packet with q = {q}")));
    }
    if !(omega.is_finite() && omega > 0.0) {
        return Err(Error::Domain(format!("omega must be positive, got {omega}")));
    }
    if window.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("packet window".into()));
    }
    if window.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Precondition("packet window must be strictly increasing".into()));
    }
    packet_nullspace(window, omega, q, kind)
}

/// Multiplicities of the exponents `+omega` and `-omega` in the moment system.
fn multiplicities(p: usize, q: usize, kind: KpKind) -> (usize, usize) {
    match kind {
        KpKind::Central => (q + 1, q + 1),
        KpKind::Left => (q + 1, p - q - 2),
        KpKind::Right => (p - q - 2, q + 1),
    }
}

fn packet_nullspace(window: &[f64], omega: f64, q: usize, kind: KpKind) -> Result<Vec<f64>> {
    let p = window.len();
    let (m_plus, m_minus) = multiplicities(p, q, kind);
    let center = 0.5 * (window[0] + window[p - 1]);
    let half = 0.5 * (window[p - 1] - window[0]);
    let t: Vec<f64> = window.iter().map(|x| (x - center) / half).collect();
    let a = omega * half;

    // Zero last row pads the system to square so the SVD returns the full right basis.
    let mut m = DMatrix::<f64>::zeros(p, p);
    let col_scales = if a <= SERIES_THRESHOLD {
        series_rows(&mut m, &t, a, m_plus, m_minus);
        None
    } else {
        Some(exponential_rows(&mut m, &t, a, m_plus, m_minus))
    };
    for r in 0..p - 1 {
        let scale = m.row(r).iter().fold(0.0_f64, |s, v| s.max(v.abs()));
        if scale > 0.0 {
            m.row_mut(r).scale_mut(1.0 / scale);
        }
    }

    let svd = m.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let sv = &svd.singular_values;
    let mut idx: Vec<usize> = (0..p).collect();
    idx.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    let largest = sv[idx[p - 1]];
    if p > 1 && !(sv[idx[1]] > RANK_TOL * largest) {
        return Err(Error::Conditioning(format!(
            "packet nullspace is not one-dimensional (sigma ratio {:e})",
            sv[idx[1]] / largest
        )));
    }
    let mut coeffs: Vec<f64> = v_t.row(idx[0]).iter().copied().collect();
    if let Some(ls) = col_scales {
        // Undo the column scaling in log space; components far below the largest underflow to 0.
        let logs: Vec<f64> = coeffs.iter().zip(&ls).map(|(c, s)| c.abs().ln() + s).collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (c, l) in coeffs.iter_mut().zip(&logs) {
            *c = c.signum() * (l - top).exp();
        }
    }
    let norm = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
    let peak = coeffs.iter().fold(0.0_f64, |s, c| s.max(c.abs()));
    let lead = coeffs.iter().copied().find(|c| c.abs() > 1e-12 * peak).unwrap_or(1.0);
    let s = lead.signum() / norm;
    coeffs.iter_mut().for_each(|c| *c *= s);
    Ok(coeffs)
}

/// Moment rows from a basis of the solution space of the ODE with characteristic polynomial
/// `(λ - a)^m_plus (λ + a)^m_minus`, normalized so the basis tends to monomials as `a -> 0`.
fn series_rows(m: &mut DMatrix<f64>, t: &[f64], a: f64, m_plus: usize, m_minus: usize) {
    let order = m_plus + m_minus;
    // Monic characteristic polynomial, lowest degree first.
    let mut poly = vec![1.0];
    for (root, mult) in [(a, m_plus), (-a, m_minus)] {
        for _ in 0..mult {
            let mut next = vec![0.0; poly.len() + 1];
            for (k, c) in poly.iter().enumerate() {
                next[k + 1] += c;
                next[k] -= root * c;
            }
            poly = next;
        }
    }
    let terms = order + SERIES_TERMS;
    // deriv[k][j] = k! * f_k^{(j)}(0), with f_k^{(j)}(0) = δ_jk for j < order.
    let mut fact = 1.0;
    for k in 0..order {
        if k > 0 {
            fact *= k as f64;
        }
        let mut deriv = vec![0.0; terms];
        deriv[k] = fact;
        for j in order..terms {
            deriv[j] = -(0..order).map(|l| poly[l] * deriv[j - order + l]).sum::<f64>();
        }
        for (col, &ti) in t.iter().enumerate() {
            let mut term = 1.0;
            let mut sum = 0.0;
            for (j, d) in deriv.iter().enumerate() {
                if j > 0 {
                    term *= ti / j as f64;
                }
                sum += d * term;
            }
            m[(k, col)] = sum;
        }
    }
}

/// Moment rows `(a (t - 1))^l / l! e^{a (t - 1)}` and `(a (t + 1))^l / l! e^{-a (t + 1)}`, with
/// column `i` multiplied by `e^{scale_i}` so its largest exponential factor is one.
/// Returns the log column scales.
fn exponential_rows(m: &mut DMatrix<f64>, t: &[f64], a: f64, m_plus: usize, m_minus: usize) -> Vec<f64> {
    let mut scales = Vec::with_capacity(t.len());
    for (col, &ti) in t.iter().enumerate() {
        let up = a * (ti - 1.0);
        let down = a * (ti + 1.0);
        let mut top = f64::NEG_INFINITY;
        if m_plus > 0 {
            top = top.max(up);
        }
        if m_minus > 0 {
            top = top.max(-down);
        }
        let (eu, ed) = ((up - top).exp(), (-down - top).exp());
        let mut pu = 1.0;
        for l in 0..m_plus {
            if l > 0 {
                pu *= up / l as f64;
            }
            m[(l, col)] = pu * eu;
        }
        let mut pd = 1.0;
        for l in 0..m_minus {
            if l > 0 {
                pd *= down / l as f64;
            }
            m[(m_plus + l, col)] = pd * ed;
        }
        scales.push(-top);
    }
    scales
}

/// Packet window of row `i` in the fill pattern of an `n`-point axis: `(first point, kind)`,
/// with the window ending at `last point`.
fn row_window(i: usize, n: usize, q: usize) -> (usize, usize, KpKind) {
    if i <= q {
        (0, i + q + 1, KpKind::Left)
    } else if i + q + 1 >= n {
        (i - q - 1, n - 1, KpKind::Right)
    } else {
        (i - q - 1, i + q + 1, KpKind::Central)
    }
}

/// Fills packet coefficients row by row (at smoothness index `q`) and evaluates `coeffs * kern`
/// on the band of half-width `out_bw`. Returns `(coefficients, product, max adjacent off-band residual)`.
fn fill(
    x: &[f64],
    omega: f64,
    q: usize,
    out_bw: usize,
    kern: impl Fn(f64) -> f64 + Sync,
) -> Result<(BandedMatrix, BandedMatrix, f64)> {
    let n = x.len();
    let rows: Vec<Result<(usize, Vec<f64>)>> = (0..n)
        .into_par_iter()
        .with_min_len(256)
        .map(|i| {
            let (lo, hi, kind) = row_window(i, n, q);
            let c = packet_nullspace(&x[lo..=hi], omega, q, kind)?;
            Ok((lo, c))
        })
        .collect();
    let mut a = BandedMatrix::zeros(n, q + 1, q + 1);
    for (i, r) in rows.into_iter().enumerate() {
        let (lo, c) = r?;
        for (k, v) in c.into_iter().enumerate() {
            a.set(i, lo + k, v);
        }
    }
    let mut prod = BandedMatrix::zeros(n, out_bw, out_bw);
    let mut resid = 0.0_f64;
    for i in 0..n {
        let cols = a.row_range(i);
        let coeffs = a.row(i);
        let apply = |j: usize| -> f64 { cols.clone().zip(coeffs).map(|(k, c)| c * kern((x[k] - x[j]).abs())).sum() };
        for j in prod.row_range(i) {
            prod.set(i, j, apply(j));
        }
        if i > out_bw {
            resid = resid.max(apply(i - out_bw - 1).abs());
        }
        if i + out_bw + 1 < n {
            resid = resid.max(apply(i + out_bw + 1).abs());
        }
    }
    Ok((a, prod, resid))
}

/// Per-dimension factorization `A K = Φ` in sorted order.
#[derive(Debug, Clone)]
pub struct KpFactor {
    pub a: BandedMatrix,
    pub phi: BandedMatrix,
    pub axis: SortedAxis,
    pub params: KernelParams,
    /// Largest `|(A K)_ij|` on the first diagonals outside Φ's band.
    pub offband_residual: f64,
}

/// Per-dimension factorization `B ∂K/∂ω = Ψ` in sorted order.
#[derive(Debug, Clone)]
pub struct GradFactor {
    pub b: BandedMatrix,
    pub psi: BandedMatrix,
    pub axis: SortedAxis,
    pub params: KernelParams,
    /// Largest `|(B ∂K)_ij|` on the first diagonals outside Ψ's band.
    pub offband_residual: f64,
}

/// Builds `A` (bandwidth ν+1/2) and `Φ = A K` (bandwidth ν-1/2).
pub fn kp_factorize(axis: &SortedAxis, params: &KernelParams) -> Result<KpFactor> {
    let q = params.nu.q();
    let n = axis.len();
    if n < 2 * q + 3 {
        return Err(Error::Size { needed: 2 * q + 3, got: n });
    }
    let k = *params;
    let (a, phi, offband_residual) = fill(axis.values(), params.omega, q, q, move |d| k.eval_unchecked(d))?;
    Ok(KpFactor { a, phi, axis: axis.clone(), params: *params, offband_residual })
}

/// Builds `B` (the `A` of smoothness ν+1, bandwidth ν+3/2) and `Ψ = B ∂K/∂ω` (bandwidth ν+1/2).
pub fn grad_factorize(axis: &SortedAxis, params: &KernelParams) -> Result<GradFactor> {
    let q = params.nu.q();
    let n = axis.len();
    if n < 2 * q + 5 {
        return Err(Error::Size { needed: 2 * q + 5, got: n });
    }
    let k = *params;
    let (b, psi, offband_residual) =
        fill(axis.values(), params.omega, q + 1, q + 1, move |d| k.domega_unchecked(d))?;
    Ok(GradFactor { b, psi, axis: axis.clone(), params: *params, offband_residual })
}

/// Consecutive nonzero entries of a length-`n` vector, starting at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseBasisVector {
    pub start: usize,
    pub coeffs: Vec<f64>,
}

impl SparseBasisVector {
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn end(&self) -> usize {
        self.start + self.coeffs.len()
    }

    /// `⟨self, v⟩` against a dense vector.
    #[inline]
    pub fn dot(&self, v: &[f64]) -> f64 {
        self.coeffs.iter().zip(&v[self.start..self.end()]).map(|(a, b)| a * b).sum()
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        out[self.start..self.end()].copy_from_slice(&self.coeffs);
        out
    }
}

/// Rows of `A` whose packet support can contain a point in bracket `j`.
#[inline]
fn basis_rows(j: isize, n: usize, q: usize) -> std::ops::Range<usize> {
    let lo = (j - q as isize).max(0) as usize;
    let hi = ((j + q as isize + 2).max(0) as usize).min(n);
    lo.min(hi)..hi
}

impl KpFactor {
    pub fn n(&self) -> usize {
        self.axis.len()
    }

    /// Hints the cache to load what [`KpFactor::basis_at`] reads for bracket `j`.
    #[inline]
    pub fn prefetch(&self, j: isize) {
        let n = self.n();
        let q = self.params.nu.q();
        let rows = basis_rows(j, n, q);
        crate::banded::prefetch(self.axis.values(), rows.start.saturating_sub(q + 1)..(rows.end + q + 1).min(n));
        self.a.prefetch_rows(rows);
    }

    /// Values and x-derivatives of the packets at `x_star` for bracket `j` (see [`SortedAxis::locate`]).
    pub fn basis_at(&self, j: isize, x_star: f64, with_grad: bool) -> (SparseBasisVector, Option<SparseBasisVector>) {
        let n = self.n();
        let q = self.params.nu.q();
        let rows = basis_rows(j, n, q);
        let x = self.axis.values();
        // Kernel values at every point any of the rows touches.
        let cols_lo = rows.start.saturating_sub(q + 1);
        let cols_hi = (rows.end + q + 1).min(n);
        let kv: Vec<f64> = (cols_lo..cols_hi).map(|k| self.params.eval_at(x_star, x[k])).collect();
        let kd: Vec<f64> =
            if with_grad { (cols_lo..cols_hi).map(|k| self.params.dx(x_star, x[k])).collect() } else { Vec::new() };
        let mut val = Vec::with_capacity(rows.len());
        let mut grad = Vec::with_capacity(if with_grad { rows.len() } else { 0 });
        for i in rows.clone() {
            let cols = self.a.row_range(i);
            let coeffs = self.a.row(i);
            let off = cols.start - cols_lo;
            val.push(coeffs.iter().zip(&kv[off..]).map(|(c, k)| c * k).sum());
            if with_grad {
                grad.push(coeffs.iter().zip(&kd[off..]).map(|(c, k)| c * k).sum());
            }
        }
        let start = rows.start;
        (
            SparseBasisVector { start, coeffs: val },
            with_grad.then_some(SparseBasisVector { start, coeffs: grad }),
        )
    }
}

/// `φ(x*) = A k(X, x*)` restricted to its nonzero window.
pub fn eval_basis(factor: &KpFactor, x_star: f64) -> SparseBasisVector {
    factor.basis_at(factor.axis.locate(x_star), x_star, false).0
}

/// `∂φ(x*)/∂x*` on the same window as [`eval_basis`].
pub fn eval_basis_grad(factor: &KpFactor, x_star: f64) -> SparseBasisVector {
    factor.basis_at(factor.axis.locate(x_star), x_star, true).1.expect("gradient requested")
}

/// `Σ_i c_i k(x, x_i)` for a packet with coefficients `c` on `window`.
pub fn packet_value(window: &[f64], coeffs: &[f64], params: &KernelParams, x: f64, order: KpOrder) -> f64 {
    window
        .iter()
        .zip(coeffs)
        .map(|(&xi, c)| {
            let d = (x - xi).abs();
            c * match order {
                KpOrder::Base => params.eval_unchecked(d),
                KpOrder::Grad => params.domega_unchecked(d),
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const E: f64 = std::f64::consts::E;

    fn params(q: usize, omega: f64) -> KernelParams {
        KernelParams::new(HalfIntegerSmoothness::from_q(q), omega).unwrap()
    }

    fn proportional(got: &[f64], want: &[f64]) -> bool {
        let nw = want.iter().map(|v| v * v).sum::<f64>().sqrt();
        got.iter().zip(want).all(|(g, w)| (g - w / nw).abs() < 1e-12)
    }

    fn random_axis(n: usize, lo: f64, hi: f64, seed: u64) -> SortedAxis {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        SortedAxis::new(&xs).unwrap()
    }

    /// Dense `K` with entries `kern(|x_i - x_j|)`.
    fn dense(x: &[f64], kern: impl Fn(f64) -> f64) -> DMatrix<f64> {
        DMatrix::from_fn(x.len(), x.len(), |i, j| kern((x[i] - x[j]).abs()))
    }

    #[test]
    fn three_point_packets() {
        let nu = HalfIntegerSmoothness::HALF;
        let c = solve_kp_coeffs(&[-1.0, 0.0, 1.0], 1.0, nu, KpKind::Central, KpOrder::Base).unwrap();
        assert!(proportional(&c, &[1.0, -(E + 1.0 / E), 1.0]));
        let l = solve_kp_coeffs(&[-1.0, 0.0], 1.0, nu, KpKind::Left, KpOrder::Base).unwrap();
        assert!(proportional(&l, &[1.0, -1.0 / E]));
        let r = solve_kp_coeffs(&[0.0, 1.0], 1.0, nu, KpKind::Right, KpOrder::Base).unwrap();
        assert!(proportional(&r, &[-1.0 / E, 1.0]) || proportional(&r, &[1.0 / E, -1.0]));
    }

    #[test]
    fn rejects_bad_windows() {
        let nu = HalfIntegerSmoothness::HALF;
        assert!(matches!(
            solve_kp_coeffs(&[0.0, 0.0, 1.0], 1.0, nu, KpKind::Central, KpOrder::Base),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            solve_kp_coeffs(&[0.0, 1.0], 1.0, nu, KpKind::Central, KpOrder::Base),
            Err(Error::Precondition(_))
        ));
        assert!(solve_kp_coeffs(&[0.0, 1.0, 2.0], 1.0, nu, KpKind::Left, KpOrder::Base).is_err());
        assert!(solve_kp_coeffs(&[0.0, 1.0, 2.0, 3.0, 4.0], 1.0, nu, KpKind::Central, KpOrder::Grad).is_ok());
    }

    #[test]
    fn small_axis_factor() {
        let axis = SortedAxis::new(&[1.0, -1.0, 0.0]).unwrap();
        assert_eq!(axis.perm(), &[2, 0, 1]);
        let f = kp_factorize(&axis, &params(0, 1.0)).unwrap();
        let row = |i: usize| (0..3).map(|j| f.a.get(i, j)).collect::<Vec<_>>();
        assert!(proportional(&row(0), &[1.0, -1.0 / E, 0.0]));
        assert!(proportional(&row(1), &[1.0, -(E + 1.0 / E), 1.0]));
        let r2 = row(2);
        assert!(proportional(&r2, &[0.0, -1.0 / E, 1.0]) || proportional(&r2, &[0.0, 1.0 / E, -1.0]));
        let (lo, up) = f.phi.effective_bandwidths(1e-12);
        assert_eq!((lo, up), (0, 0));
        assert!(matches!(
            kp_factorize(&SortedAxis::new(&[0.0, 1.0]).unwrap(), &params(0, 1.0)),
            Err(Error::Size { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn outside_point_sees_only_right_row() {
        let axis = SortedAxis::new(&[-1.0, 0.0, 1.0]).unwrap();
        let f = kp_factorize(&axis, &params(0, 1.0)).unwrap();
        let b = eval_basis(&f, 2.0);
        let dense = b.to_dense(3);
        assert!(dense[0].abs() <= 1e-12 && dense[1].abs() <= 1e-9);
        assert!(dense[2].abs() > 1e-3);
    }

    #[test]
    fn factorization_identity() {
        for q in 0..=2 {
            for (seed, &omega) in [0.5, 3.0, 40.0].iter().enumerate() {
                let axis = random_axis(60, 0.0, 5.0, seed as u64 + 10 * q as u64);
                let p = params(q, omega);
                let f = kp_factorize(&axis, &p).unwrap();
                let k = dense(axis.values(), |d| p.eval_unchecked(d));
                let r = f.a.to_dense() * &k - f.phi.to_dense();
                let knorm = k.row_iter().map(|r| r.abs().sum()).fold(0.0, f64::max);
                assert!(r.abs().max() <= 1e-9 * knorm, "q={q} omega={omega} resid={}", r.abs().max());
                assert_eq!(f.a.lower_bw(), q + 1);
                assert_eq!(f.phi.lower_bw(), q);

                let g = grad_factorize(&axis, &p).unwrap();
                let dk = dense(axis.values(), |d| p.domega_unchecked(d));
                let r = g.b.to_dense() * &dk - g.psi.to_dense();
                let dnorm = dk.row_iter().map(|r| r.abs().sum()).fold(0.0, f64::max);
                assert!(r.abs().max() <= 1e-8 * dnorm, "grad q={q} omega={omega}");
                let raised = kp_factorize(&axis, &params(q + 1, omega)).unwrap();
                assert_eq!(raised.a, g.b);
            }
        }
    }

    #[test]
    fn grad_bandwidth_on_grid() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let axis = SortedAxis::new(&xs).unwrap();
        let g = grad_factorize(&axis, &params(0, 1.0)).unwrap();
        assert!(g.offband_residual <= 1e-9);
        assert_eq!(g.psi.lower_bw(), 1);
        assert!(matches!(
            grad_factorize(&SortedAxis::new(&xs[..4]).unwrap(), &params(0, 1.0)),
            Err(Error::Size { needed: 5, got: 4 })
        ));
    }

    #[test]
    fn basis_matches_dense_product() {
        for q in 0..=2 {
            let axis = random_axis(80, -3.0, 3.0, 7 + q as u64);
            let p = params(q, 2.0);
            let f = kp_factorize(&axis, &p).unwrap();
            let a = f.a.to_dense();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            for _ in 0..50 {
                let xs: f64 = rng.random_range(-4.0..4.0);
                let kx = nalgebra::DVector::from_iterator(80, axis.values().iter().map(|&xi| p.eval_at(xs, xi)));
                let full = &a * kx;
                let b = eval_basis(&f, xs);
                assert!(b.len() <= 2 * q + 2);
                let sparse = b.to_dense(80);
                for i in 0..80 {
                    assert!((full[i] - sparse[i]).abs() <= 1e-9, "q={q} x={xs} i={i}");
                }
            }
        }
    }

    #[test]
    fn basis_gradient_matches_fd() {
        let h = 1e-6;
        for q in 0..=2 {
            let axis = random_axis(40, 0.0, 4.0, 11 + q as u64);
            let f = kp_factorize(&axis, &params(q, 1.5)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for _ in 0..20 {
                let xs: f64 = rng.random_range(0.0..4.0);
                let near = axis.values().iter().any(|v| (v - xs).abs() < 10.0 * h);
                if near {
                    continue;
                }
                let g = eval_basis_grad(&f, xs);
                let plus = eval_basis(&f, xs + h).to_dense(40);
                let minus = eval_basis(&f, xs - h).to_dense(40);
                let gd = g.to_dense(40);
                for i in 0..40 {
                    let fd = (plus[i] - minus[i]) / (2.0 * h);
                    assert!((gd[i] - fd).abs() <= 1e-5, "q={q} i={i} {} vs {fd}", gd[i]);
                }
            }
        }
    }

    #[test]
    fn central_packet_peak_is_stationary() {
        let axis = SortedAxis::new(&[-1.0, 0.0, 1.0]).unwrap();
        let f = kp_factorize(&axis, &params(0, 1.0)).unwrap();
        // Between two data points so the kernel is differentiable there; use symmetric window row.
        let c = solve_kp_coeffs(&[-1.0, 0.0, 1.0], 1.0, HalfIntegerSmoothness::HALF, KpKind::Central, KpOrder::Base)
            .unwrap();
        let h = 1e-5;
        let v = |x: f64| packet_value(&[-1.0, 0.0, 1.0], &c, &params(0, 1.0), x, KpOrder::Base);
        // ν = 1/2 packets have a corner at the middle point; the symmetric difference vanishes.
        assert!(((v(h) - v(-h)) / (2.0 * h)).abs() < 1e-9);
        // Window at x = 0 starts at the central row.
        assert_eq!(eval_basis_grad(&f, 0.0).start, 1);
        assert!(eval_basis_grad(&f, 0.0).coeffs[0].abs() < 1e-15);
        // Far right only the right one-sided row is active.
        let far = eval_basis(&f, 10.0);
        assert_eq!((far.start, far.len()), (2, 1));
    }

    #[test]
    fn hint_lookup_agrees_with_search() {
        let axis = random_axis(100, 0.0, 1.0, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let x: f64 = rng.random_range(-0.1..1.1);
            let j = axis.locate(x);
            let hint = rng.random_range(-1i64..100) as isize;
            assert_eq!(axis.locate_from(x, hint, 3).0, j);
            assert_eq!(axis.locate_from(x, j, 0), (j, true));
        }
    }

    fn check_support(q: usize, omega: f64, window: &[f64], kind: KpKind, order: KpOrder) {
        let nu = HalfIntegerSmoothness::from_q(q);
        let p = params(q, omega);
        let c = solve_kp_coeffs(window, omega, nu, kind, order).unwrap();
        let (lo, hi) = (window[0], window[window.len() - 1]);
        let width = hi - lo;
        for k in 1..=50 {
            let off = width * k as f64 / 10.0;
            if kind != KpKind::Right {
                let v = packet_value(window, &c, &p, hi + off, order);
                assert!(v.abs() <= 1e-9, "right side {kind:?} q={q} w={omega} v={v}");
            }
            if kind != KpKind::Left {
                let v = packet_value(window, &c, &p, lo - off, order);
                assert!(v.abs() <= 1e-9, "left side {kind:?} q={q} w={omega} v={v}");
            }
        }
    }

    proptest! {
        #[test]
        fn locate_matches_binary_search(
            xs in proptest::collection::vec(-1e3f64..1e3, 1..200),
            queries in proptest::collection::vec(-1.2e3f64..1.2e3, 50),
            pick in 0usize..200,
        ) {
            let mut xs = xs;
            xs.sort_by(f64::total_cmp);
            xs.dedup();
            let axis = SortedAxis::from_sorted(xs.clone()).unwrap();
            let exact = xs[pick % xs.len()];
            for x in queries.into_iter().chain([exact, exact.next_down(), exact.next_up(), f64::NAN, f64::INFINITY]) {
                let want = xs.partition_point(|&v| v <= x) as isize - 1;
                prop_assert_eq!(axis.locate(x), want, "x = {}", x);
            }
        }

        #[test]
        fn packets_are_compactly_supported(
            q in 0usize..3,
            omega in 0.05f64..1.5,
            gaps in proptest::collection::vec(0.01f64..2.0, 12),
            start in -100.0f64..100.0,
        ) {
            let mut pts = vec![start];
            for g in &gaps {
                pts.push(pts.last().unwrap() + g);
            }
            for order in [KpOrder::Base, KpOrder::Grad] {
                let qe = if order == KpOrder::Grad { q + 1 } else { q };
                check_support(q, omega, &pts[..2 * qe + 3], KpKind::Central, order);
                for p in qe + 2..=2 * qe + 2 {
                    check_support(q, omega, &pts[..p], KpKind::Left, order);
                    check_support(q, omega, &pts[..p], KpKind::Right, order);
                }
            }
        }

        #[test]
        fn packets_are_compactly_supported_at_large_omega(
            q in 0usize..3,
            omega in 1.0f64..50.0,
            gaps in proptest::collection::vec(0.5f64..1.5, 12),
        ) {
            let mut pts = vec![0.0];
            for g in &gaps {
                pts.push(pts.last().unwrap() + g / omega.sqrt());
            }
            for order in [KpOrder::Base, KpOrder::Grad] {
                let qe = if order == KpOrder::Grad { q + 1 } else { q };
                check_support(q, omega, &pts[..2 * qe + 3], KpKind::Central, order);
                for p in qe + 2..=2 * qe + 2 {
                    check_support(q, omega, &pts[..p], KpKind::Left, order);
                    check_support(q, omega, &pts[..p], KpKind::Right, order);
                }
            }
        }

        #[test]
        fn coefficients_are_translation_invariant(q in 0usize..3, shift in -1e3f64..1e3, omega in 0.1f64..10.0) {
            let w: Vec<f64> = (0..2 * q + 3).map(|i| (i as f64) * 0.7 + (i * i) as f64 * 0.05).collect();
            let ws: Vec<f64> = w.iter().map(|x| x + shift).collect();
            let nu = HalfIntegerSmoothness::from_q(q);
            let c1 = solve_kp_coeffs(&w, omega, nu, KpKind::Central, KpOrder::Base).unwrap();
            let c2 = solve_kp_coeffs(&ws, omega, nu, KpKind::Central, KpOrder::Base).unwrap();
            for (a, b) in c1.iter().zip(&c2) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }

        #[test]
        fn h_is_symmetric(q in 0usize..3, seed in 0u64..500, omega in 3.0f64..20.0) {
            let axis = random_axis(30, 0.0, 3.0, seed);
            let f = kp_factorize(&axis, &params(q, omega)).unwrap();
            let h = f.a.to_dense() * f.phi.to_dense().transpose();
            let scale = h.abs().max();
            prop_assert!((&h - h.transpose()).abs().max() <= 1e-8 * scale);
        }
    }
}
