//! Half-integer Matérn kernels in closed form.
//!
//! With `nu = q + 1/2` the kernel is an exponential times a polynomial of degree `q`:
//!
//! ```text
//! k(d) = exp(-w d) * q!/(2q)! * sum_{l=0..q} (q+l)! / (l! (q-l)!) * (2 w d)^(q-l)
//! ```
//!
//! `w` (omega) is the exponential decay rate and the amplitude is fixed to one, so `k(0) = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smoothness `nu = q + 1/2`, stored by its integer part `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HalfIntegerSmoothness {
    q: usize,
}

impl HalfIntegerSmoothness {
    pub const HALF: Self = Self { q: 0 };
    pub const THREE_HALVES: Self = Self { q: 1 };
    pub const FIVE_HALVES: Self = Self { q: 2 };

    pub fn from_q(q: usize) -> Self {
        Self { q }
    }

    /// Parses a smoothness value such as `0.5`, `1.5`, `2.5`.
    pub fn from_nu(nu: f64) -> Result<Self> {
        let q = nu - 0.5;
        if !nu.is_finite() || q < 0.0 || (q - q.round()).abs() > 1e-12 {
            return Err(Error::Domain(format!("nu = {nu} is not a half-integer >= 1/2")));
        }
        Ok(Self { q: q.round() as usize })
    }

    pub fn q(self) -> usize {
        self.q
    }

    pub fn nu(self) -> f64 {
        self.q as f64 + 0.5
    }

    /// The smoothness one step up, `nu + 1`.
    pub fn raised(self) -> Self {
        Self { q: self.q + 1 }
    }

    /// Number of points in a central kernel packet, `2 nu + 2`.
    pub fn central_len(self) -> usize {
        2 * self.q + 3
    }
}

/// Smoothness and decay rate of a one-dimensional Matérn kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub nu: HalfIntegerSmoothness,
    pub omega: f64,
}

impl KernelParams {
    pub fn new(nu: HalfIntegerSmoothness, omega: f64) -> Result<Self> {
        if !(omega.is_finite() && omega > 0.0) {
            return Err(Error::Domain(format!("omega must be positive and finite, got {omega}")));
        }
        Ok(Self { nu, omega })
    }

    /// Polynomial coefficients `c_j` of `p(t) = sum_j c_j t^j`, where `k(d) = exp(-t) p(t)`, `t = omega d`.
    pub fn poly_coeffs(&self) -> Vec<f64> {
        poly_coeffs(self.nu.q())
    }

    pub fn eval(&self, d: f64) -> Result<f64> {
        check_distance(d)?;
        Ok(self.eval_unchecked(d))
    }

    pub fn domega(&self, d: f64) -> Result<f64> {
        check_distance(d)?;
        Ok(self.domega_unchecked(d))
    }

    /// `k(|x - x0|)`.
    #[inline]
    pub fn eval_at(&self, x: f64, x0: f64) -> f64 {
        self.eval_unchecked((x - x0).abs())
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, d: f64) -> f64 {
        let t = self.omega * d;
        let (p, _) = poly_and_derivative(self.nu.q(), t);
        (-t).exp() * p
    }

    /// `d k / d omega = d * exp(-t) * (p'(t) - p(t))`.
    #[inline]
    pub(crate) fn domega_unchecked(&self, d: f64) -> f64 {
        let t = self.omega * d;
        let (p, dp) = poly_and_derivative(self.nu.q(), t);
        d * (-t).exp() * (dp - p)
    }

    /// `d k(|x - x0|) / dx`. Returns 0 at `x == x0`, including for `nu = 1/2`
    /// where the kernel has a corner there.
    #[inline]
    pub fn dx(&self, x: f64, x0: f64) -> f64 {
        let diff = x - x0;
        if diff == 0.0 {
            return 0.0;
        }
        let t = self.omega * diff.abs();
        let (p, dp) = poly_and_derivative(self.nu.q(), t);
        diff.signum() * self.omega * (-t).exp() * (dp - p)
    }
}

fn check_distance(d: f64) -> Result<()> {
    if d.is_nan() || d < 0.0 {
        return Err(Error::Domain(format!("distance must be non-negative, got {d}")));
    }
    Ok(())
}

/// `c_j = q!/(2q)! * (2q - j)! / ((q - j)! j!) * 2^j` for `j = 0..=q`.
pub fn poly_coeffs(q: usize) -> Vec<f64> {
    let fact = |m: usize| (1..=m).fold(1.0_f64, |acc, v| acc * v as f64);
    let lead = fact(q) / fact(2 * q);
    (0..=q)
        .map(|j| lead * fact(2 * q - j) / (fact(q - j) * fact(j)) * 2f64.powi(j as i32))
        .collect()
}

/// Evaluates `p(t)` and `p'(t)` by Horner's rule. Coefficients are hard-coded for the common
/// smoothness values and computed otherwise.
#[inline]
fn poly_and_derivative(q: usize, t: f64) -> (f64, f64) {
    match q {
        0 => (1.0, 0.0),
        1 => (1.0 + t, 1.0),
        2 => (1.0 + t + t * t / 3.0, 1.0 + 2.0 * t / 3.0),
        _ => {
            let c = poly_coeffs(q);
            let mut p = 0.0;
            let mut dp = 0.0;
            for &cj in c.iter().rev() {
                dp = dp * t + p;
                p = p * t + cj;
            }
            (p, dp)
        }
    }
}

/// Closed-form Matérn evaluation `k(d)`.
pub fn matern_eval(params: &KernelParams, d: f64) -> Result<f64> {
    params.eval(d)
}

/// `d k(d) / d omega`.
pub fn matern_domega(params: &KernelParams, d: f64) -> Result<f64> {
    params.domega(d)
}

/// `d k(|x - x0|) / dx`.
pub fn matern_dx(params: &KernelParams, x: f64, x0: f64) -> f64 {
    params.dx(x, x0)
}
