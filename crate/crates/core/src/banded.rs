//! Square banded matrices, banded LU with partial pivoting, and log-determinants.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative pivot size below which a matrix is declared singular.
const PIVOT_TOL: f64 = 1e-14;

/// Square matrix with nonzeros confined to `-lower_bw <= j - i <= upper_bw`.
///
/// Stored row-major: row `i` keeps columns `i - lower_bw ..= i + upper_bw` contiguously.
/// Slots that fall outside the logical matrix are held at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandedMatrix {
    n: usize,
    lower_bw: usize,
    upper_bw: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, lower_bw: usize, upper_bw: usize) -> Self {
        let width = lower_bw + upper_bw + 1;
        Self { n, lower_bw, upper_bw, data: vec![0.0; n * width] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, 0, 0);
        m.data.iter_mut().for_each(|v| *v = 1.0);
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self { n: diag.len(), lower_bw: 0, upper_bw: 0, data: diag.to_vec() }
    }

    /// Copies the band of a dense matrix; entries outside the band are dropped.
    pub fn from_dense(m: &DMatrix<f64>, lower_bw: usize, upper_bw: usize) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "banded matrices are square");
        let mut b = Self::zeros(m.nrows(), lower_bw, upper_bw);
        for i in 0..b.n {
            for j in b.row_range(i) {
                b.set(i, j, m[(i, j)]);
            }
        }
        b
    }

    /// Builds a matrix by evaluating `f(i, j)` on every in-band position.
    pub fn from_fn(n: usize, lower_bw: usize, upper_bw: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut b = Self::zeros(n, lower_bw, upper_bw);
        for i in 0..n {
            for j in b.row_range(i) {
                b.set(i, j, f(i, j));
            }
        }
        b
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lower_bw(&self) -> usize {
        self.lower_bw
    }

    pub fn upper_bw(&self) -> usize {
        self.upper_bw
    }

    fn width(&self) -> usize {
        self.lower_bw + self.upper_bw + 1
    }

    /// Columns of row `i` that lie inside the band and the matrix.
    #[inline]
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        let lo = i.saturating_sub(self.lower_bw);
        let hi = (i + self.upper_bw + 1).min(self.n);
        lo..hi
    }

    #[inline]
    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && j + self.lower_bw >= i && j <= i + self.upper_bw
    }

    /// Entry `(i, j)`; zero outside the band.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[i * self.width() + j + self.lower_bw - i]
        } else {
            0.0
        }
    }

    /// Sets an in-band entry. Panics outside the band.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "({i}, {j}) is outside the band");
        let w = self.width();
        self.data[i * w + j + self.lower_bw - i] = v;
    }

    /// In-band slice of row `i`, starting at column `row_range(i).start`.
    /// Hints the cache to load rows `rows`.
    #[inline]
    pub fn prefetch_rows(&self, rows: std::ops::Range<usize>) {
        if rows.is_empty() {
            return;
        }
        let w = self.width();
        prefetch(&self.data, rows.start * w..rows.end * w);
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let r = self.row_range(i);
        let base = i * self.width() + r.start + self.lower_bw - i;
        &self.data[base..base + r.len()]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.row_range(i);
        let base = i * self.width() + r.start + self.lower_bw - i;
        &mut self.data[base..base + r.len()]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row_range(i).zip(self.row(i)) {
                d[(i, j)] = *v;
            }
        }
        d
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n, self.upper_bw, self.lower_bw);
        for i in 0..self.n {
            for (j, v) in self.row_range(i).zip(self.row(i)) {
                t.set(j, i, *v);
            }
        }
        t
    }

    /// `alpha * self + beta * other`, with the union bandwidth.
    pub fn add_scaled(&self, alpha: f64, other: &Self, beta: f64) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: other.n });
        }
        let kl = self.lower_bw.max(other.lower_bw);
        let ku = self.upper_bw.max(other.upper_bw);
        Ok(Self::from_fn(self.n, kl, ku, |i, j| alpha * self.get(i, j) + beta * other.get(i, j)))
    }

    /// `self * diag(d)`.
    pub fn scale_columns(&self, d: &[f64]) -> Self {
        let mut out = self.clone();
        for i in 0..self.n {
            let start = self.row_range(i).start;
            for (k, v) in out.row_mut(i).iter_mut().enumerate() {
                *v *= d[start + k];
            }
        }
        out
    }

    /// Banded product `self * other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: other.n });
        }
        let kl = (self.lower_bw + other.lower_bw).min(self.n.saturating_sub(1));
        let ku = (self.upper_bw + other.upper_bw).min(self.n.saturating_sub(1));
        let mut out = Self::zeros(self.n, kl, ku);
        for i in 0..self.n {
            for (k, a) in self.row_range(i).zip(self.row(i)) {
                if *a == 0.0 {
                    continue;
                }
                for (j, b) in other.row_range(k).zip(other.row(k)) {
                    let w = out.width();
                    out.data[i * w + j + kl - i] += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n];
        self.matvec_into(v, &mut out)?;
        Ok(out)
    }

    pub fn matvec_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        if v.len() != self.n || out.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: v.len().min(out.len()) });
        }
        for (i, o) in out.iter_mut().enumerate() {
            let r = self.row_range(i);
            *o = self.row(i).iter().zip(&v[r]).map(|(a, b)| a * b).sum();
        }
        Ok(())
    }

    /// `selfᵀ v`.
    pub fn matvec_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: v.len() });
        }
        let mut out = vec![0.0; self.n];
        for (i, vi) in v.iter().enumerate() {
            let start = self.row_range(i).start;
            for (k, a) in self.row(i).iter().enumerate() {
                out[start + k] += a * vi;
            }
        }
        Ok(out)
    }

    pub fn lu(&self) -> Result<BandedLu> {
        BandedLu::new(self)
    }

    /// Largest `|i - j|` over nonzero entries, below and above the diagonal.
    pub fn effective_bandwidths(&self, tol: f64) -> (usize, usize) {
        let mut lo = 0;
        let mut up = 0;
        for i in 0..self.n {
            for (j, v) in self.row_range(i).zip(self.row(i)) {
                if v.abs() > tol {
                    if j < i {
                        lo = lo.max(i - j);
                    } else {
                        up = up.max(j - i);
                    }
                }
            }
        }
        (lo, up)
    }
}

/// LU factorization `P A = L U` of a banded matrix with partial pivoting.
///
/// `U` has upper bandwidth `lower_bw + upper_bw`; the multipliers of each elimination step and
/// the chosen pivot rows are stored separately.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    /// Row `i` covers columns `i - kl ..= i + kl + ku`; after factorization it holds `U`.
    work: Vec<f64>,
    /// `kl` multipliers per step.
    mult: Vec<f64>,
    piv: Vec<usize>,
}

impl BandedLu {
    pub fn new(m: &BandedMatrix) -> Result<Self> {
        let n = m.n;
        let kl = m.lower_bw;
        let ku = m.upper_bw;
        let w = 2 * kl + ku + 1;
        let mut work = vec![0.0; n * w];
        for i in 0..n {
            for (j, v) in m.row_range(i).zip(m.row(i)) {
                work[i * w + j + kl - i] = *v;
            }
        }
        let scale = m.max_abs();
        if n > 0 && !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Singular("matrix is zero or non-finite".into()));
        }
        let tol = PIVOT_TOL * scale;
        let mut mult = vec![0.0; n * kl];
        let mut piv = vec![0; n];
        let idx = |r: usize, c: usize| r * w + c + kl - r;

        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + kl + ku).min(n - 1);
            let mut p = k;
            let mut best = work[idx(k, k)].abs();
            for r in k + 1..=last_row {
                let v = work[idx(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if !(best > tol) {
                return Err(Error::Singular(format!("pivot {best:e} at step {k} is below {tol:e}")));
            }
            piv[k] = p;
            if p != k {
                for c in k..=last_col {
                    work.swap(idx(k, c), idx(p, c));
                }
            }
            let pivot = work[idx(k, k)];
            for r in k + 1..=last_row {
                let l = work[idx(r, k)] / pivot;
                mult[k * kl + (r - k - 1)] = l;
                work[idx(r, k)] = 0.0;
                if l != 0.0 {
                    for c in k + 1..=last_col {
                        work[idx(r, c)] -= l * work[idx(k, c)];
                    }
                }
            }
        }
        Ok(Self { n, kl, ku, work, mult, piv })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn u(&self, r: usize, c: usize) -> f64 {
        let w = 2 * self.kl + self.ku + 1;
        self.work[r * w + c + self.kl - r]
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: len });
        }
        Ok(())
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }

    pub fn solve_in_place(&self, x: &mut [f64]) -> Result<()> {
        self.check_len(x.len())?;
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            if xk != 0.0 {
                let last_row = (k + kl).min(n - 1);
                for r in k + 1..=last_row {
                    x[r] -= self.mult[k * kl + (r - k - 1)] * xk;
                }
            }
        }
        for k in (0..n).rev() {
            let last_col = (k + kl + ku).min(n - 1);
            let mut s = x[k];
            for c in k + 1..=last_col {
                s -= self.u(k, c) * x[c];
            }
            x[k] = s / self.u(k, k);
        }
        Ok(())
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.solve_transpose_in_place(&mut x)?;
        Ok(x)
    }

    pub fn solve_transpose_in_place(&self, x: &mut [f64]) -> Result<()> {
        self.check_len(x.len())?;
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let first = k.saturating_sub(kl + ku);
            let mut s = x[k];
            for r in first..k {
                s -= self.u(r, k) * x[r];
            }
            x[k] = s / self.u(k, k);
        }
        for k in (0..n).rev() {
            let last_row = (k + kl).min(n - 1);
            let mut s = x[k];
            for r in k + 1..=last_row {
                s -= self.mult[k * kl + (r - k - 1)] * x[r];
            }
            x[k] = s;
            let p = self.piv[k];
            if p != k {
                x.swap(k, p);
            }
        }
        Ok(())
    }

    /// Solves for every column of `b`.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_len(b.nrows())?;
        let mut out = b.clone();
        for mut col in out.column_iter_mut() {
            self.solve_in_place(col.as_mut_slice())?;
        }
        Ok(out)
    }

    /// `(log|det A|, sign det A)`.
    pub fn logdet(&self) -> (f64, f64) {
        let mut log = 0.0;
        let mut sign = 1.0;
        for k in 0..self.n {
            let u = self.u(k, k);
            log += u.abs().ln();
            if u < 0.0 {
                sign = -sign;
            }
            if self.piv[k] != k {
                sign = -sign;
            }
        }
        (log, sign)
    }
}

/// Banded matrix-vector product.
pub fn band_matvec(m: &BandedMatrix, v: &[f64]) -> Result<Vec<f64>> {
    m.matvec(v)
}

/// Solves `m x = rhs` by banded LU.
pub fn band_solve(m: &BandedMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    m.lu()?.solve(rhs)
}

/// Solves `m X = rhs` column by column.
pub fn band_solve_matrix(m: &BandedMatrix, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.lu()?.solve_matrix(rhs)
}

/// `(log|det m|, sign det m)`.
pub fn band_logdet(m: &BandedMatrix) -> Result<(f64, f64)> {
    Ok(m.lu()?.logdet())
}

/// Touches one value per cache line of `data[range]` so the loads overlap.
#[inline]
pub fn prefetch(data: &[f64], range: std::ops::Range<usize>) {
    let end = range.end.min(data.len());
    let mut i = range.start;
    while i < end {
        std::hint::black_box(data[i]);
        i += 8;
    }
    if end > range.start {
        std::hint::black_box(data[end - 1]);
    }
}
