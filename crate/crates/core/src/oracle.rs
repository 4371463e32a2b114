//! Dense reference computations for tests and benchmarks.
//!
//! Every quantity is formed from full kernel matrices in the original observation order, with
//! `S` the stack of `D` identity blocks and `K` the block-diagonal matrix of per-dimension kernels.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matern::{HalfIntegerSmoothness, KernelParams};

/// Largest `n` the oracle accepts.
pub const MAX_ORACLE_N: usize = 2000;
const JITTER: f64 = 1e-10;

/// Cholesky factor, retried once with a small diagonal jitter that is reported on stderr.
pub fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    let scale = m.diagonal().amax().max(1.0);
    eprintln!("oracle: cholesky failed, retrying with jitter {:e}", JITTER * scale);
    let jittered = m + DMatrix::identity(m.nrows(), m.ncols()) * (JITTER * scale);
    jittered.cholesky().ok_or_else(|| Error::Singular("oracle cholesky failed after jitter".into()))
}

fn logdet_spd(m: &DMatrix<f64>) -> Result<f64> {
    let c = cholesky(m)?;
    Ok(2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Dense additive GP over row-major inputs.
#[derive(Debug, Clone)]
pub struct DenseGp {
    x: Vec<f64>,
    y: DVector<f64>,
    params: Vec<KernelParams>,
    sigma: f64,
}

impl DenseGp {
    pub fn new(x: &[f64], y: &[f64], nu: HalfIntegerSmoothness, omegas: &[f64], sigma: f64) -> Result<Self> {
        let d = omegas.len();
        if d == 0 || x.len() != y.len() * d {
            return Err(Error::DimensionMismatch { expected: y.len() * d.max(1), got: x.len() });
        }
        if y.len() > MAX_ORACLE_N {
            return Err(Error::TooLarge { limit: MAX_ORACLE_N, got: y.len() });
        }
        let params = omegas.iter().map(|&w| KernelParams::new(nu, w)).collect::<Result<_>>()?;
        Ok(Self { x: x.to_vec(), y: DVector::from_column_slice(y), params, sigma })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d_dims(&self) -> usize {
        self.params.len()
    }

    fn coord(&self, i: usize, d: usize) -> f64 {
        self.x[i * self.d_dims() + d]
    }

    pub fn with_omegas(&self, omegas: &[f64]) -> Result<Self> {
        let nu = self.params[0].nu;
        Self::new(&self.x, self.y.as_slice(), nu, omegas, self.sigma)
    }

    /// `k_d(X_d, X_d)`.
    pub fn kernel_dim(&self, d: usize) -> DMatrix<f64> {
        let p = self.params[d];
        DMatrix::from_fn(self.n(), self.n(), |i, j| p.eval_at(self.coord(i, d), self.coord(j, d)))
    }

    /// `∂k_d(X_d, X_d)/∂ω_d`.
    pub fn kernel_dim_domega(&self, d: usize) -> DMatrix<f64> {
        let p = self.params[d];
        DMatrix::from_fn(self.n(), self.n(), |i, j| {
            p.domega((self.coord(i, d) - self.coord(j, d)).abs()).expect("finite distance")
        })
    }

    /// `k(X, X) = Σ_d k_d(X_d, X_d)`.
    pub fn kernel(&self) -> DMatrix<f64> {
        (0..self.d_dims()).map(|d| self.kernel_dim(d)).fold(DMatrix::zeros(self.n(), self.n()), |a, b| a + b)
    }

    /// `k(X, X) + σ² I`.
    pub fn gram(&self) -> DMatrix<f64> {
        self.kernel() + DMatrix::identity(self.n(), self.n()) * (self.sigma * self.sigma)
    }

    fn cross_dim(&self, d: usize, x: &[f64]) -> DVector<f64> {
        DVector::from_fn(self.n(), |i, _| self.params[d].eval_at(x[d], self.coord(i, d)))
    }

    fn cross(&self, x: &[f64]) -> DVector<f64> {
        (0..self.d_dims()).map(|d| self.cross_dim(d, x)).fold(DVector::zeros(self.n()), |a, b| a + b)
    }

    /// Posterior mean and variance from the textbook formulas.
    pub fn posterior(&self, x: &[f64]) -> Result<(f64, f64)> {
        let c = cholesky(&self.gram())?;
        let kx = self.cross(x);
        let mean = kx.dot(&c.solve(&self.y));
        let var = self.d_dims() as f64 - kx.dot(&c.solve(&kx));
        Ok((mean, var))
    }

    /// Block-diagonal `K` over the `D n` stacked coordinates.
    pub fn block_k(&self) -> DMatrix<f64> {
        let (n, dd) = (self.n(), self.d_dims());
        let mut k = DMatrix::zeros(n * dd, n * dd);
        for d in 0..dd {
            k.view_mut((d * n, d * n), (n, n)).copy_from(&self.kernel_dim(d));
        }
        k
    }

    /// Selector `S`, the `D n × n` stack of identities.
    pub fn selector(&self) -> DMatrix<f64> {
        let (n, dd) = (self.n(), self.d_dims());
        DMatrix::from_fn(n * dd, n, |i, j| if i % n == j { 1.0 } else { 0.0 })
    }

    /// `K⁻¹ + σ⁻² S Sᵀ`. Requires every `k_d(X_d, X_d)` to be invertible.
    pub fn ksys(&self) -> Result<DMatrix<f64>> {
        let kinv = cholesky(&self.block_k())?.inverse();
        let s = self.selector();
        Ok(kinv + &s * s.transpose() * self.sigma.powi(-2))
    }

    pub fn ksys_logdet(&self) -> Result<f64> {
        logdet_spd(&self.ksys()?)
    }

    pub fn ksys_eigenvalues(&self) -> Result<DVector<f64>> {
        Ok(self.ksys()?.symmetric_eigenvalues())
    }

    /// Posterior mean and variance from the stacked block form
    /// `μ = κᵀ K⁻¹ (K⁻¹ + σ⁻² S Sᵀ)⁻¹ S σ⁻² Y`, `s = D - κᵀ K⁻¹ κ + κᵀ K⁻¹ (K⁻¹ + σ⁻² S Sᵀ)⁻¹ K⁻¹ κ`.
    pub fn block_posterior(&self, x: &[f64]) -> Result<(f64, f64)> {
        let n = self.n();
        let kinv = cholesky(&self.block_k())?.inverse();
        let sys = cholesky(&self.ksys()?)?;
        let mut kappa = DVector::zeros(n * self.d_dims());
        for d in 0..self.d_dims() {
            kappa.rows_mut(d * n, n).copy_from(&self.cross_dim(d, x));
        }
        let z = &kinv * &kappa;
        let rhs = self.selector() * &self.y * self.sigma.powi(-2);
        let mean = z.dot(&sys.solve(&rhs));
        let var = self.d_dims() as f64 - kappa.dot(&z) + z.dot(&sys.solve(&z));
        Ok((mean, var))
    }

    /// `-Yᵀ (k + σ² I)⁻¹ Y - log|k + σ² I|`.
    pub fn loglik(&self) -> Result<f64> {
        let c = cholesky(&self.gram())?;
        let quad = self.y.dot(&c.solve(&self.y));
        let logdet = 2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(-quad - logdet)
    }

    /// The same value through the stacked system:
    /// `Yᵀ R Y = σ⁻² YᵀY - σ⁻⁴ YᵀSᵀ K_sys⁻¹ S Y` and
    /// `log|k + σ² I| = log|K_sys| + log|K| + 2 n log σ`.
    pub fn loglik_block(&self) -> Result<f64> {
        let s2 = self.sigma * self.sigma;
        let sys = cholesky(&self.ksys()?)?;
        let sy = self.selector() * &self.y;
        let quad = self.y.dot(&self.y) / s2 - sy.dot(&sys.solve(&sy)) / (s2 * s2);
        let logdet = logdet_spd(&self.ksys()?)?
            + logdet_spd(&self.block_k())?
            + 2.0 * self.n() as f64 * self.sigma.ln();
        Ok(-quad - logdet)
    }

    /// `∂l/∂ω_d = Yᵀ R ∂k_d R Y - tr(R ∂k_d)`.
    pub fn loglik_grad(&self, d: usize) -> Result<f64> {
        let c = cholesky(&self.gram())?;
        let dk = self.kernel_dim_domega(d);
        let ry = c.solve(&self.y);
        let r_dk = c.solve(&dk);
        Ok(ry.dot(&(&dk * &ry)) - r_dk.trace())
    }

    /// Central difference of `l` in `ω_d` with step `h_rel · ω_d`.
    pub fn loglik_fd_grad(&self, d: usize, h_rel: f64) -> Result<f64> {
        let w: Vec<f64> = self.params.iter().map(|p| p.omega).collect();
        let h = h_rel * w[d];
        let mut up = w.clone();
        up[d] += h;
        let mut dn = w;
        dn[d] -= h;
        Ok((self.with_omegas(&up)?.loglik()? - self.with_omegas(&dn)?.loglik()?) / (2.0 * h))
    }
}

/// Draws responses from the additive prior plus `N(0, σ²)` noise at row-major inputs `x`.
pub fn sample_prior<R: Rng>(
    x: &[f64],
    nu: HalfIntegerSmoothness,
    omegas: &[f64],
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = x.len() / omegas.len().max(1);
    let zeros = vec![0.0; n];
    let gp = DenseGp::new(x, &zeros, nu, omegas, sigma)?;
    let c = cholesky(&gp.kernel())?;
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let f = c.l() * z;
    Ok(f.iter().map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_gp(n: usize, d: usize, seed: u64) -> DenseGp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(0.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let omegas: Vec<f64> = (0..d).map(|_| rng.random_range(10.0..30.0)).collect();
        DenseGp::new(&x, &y, HalfIntegerSmoothness::THREE_HALVES, &omegas, 0.5).unwrap()
    }

    #[test]
    fn single_point_posterior() {
        let p = KernelParams::new(HalfIntegerSmoothness::HALF, 1.0).unwrap();
        let gp = DenseGp::new(&[0.0], &[2.0], HalfIntegerSmoothness::HALF, &[1.0], 1.0).unwrap();
        let c = p.eval_at(0.7, 0.0);
        let (m, s) = gp.posterior(&[0.7]).unwrap();
        assert!((m - c * 2.0 / 2.0).abs() < 1e-14);
        assert!((s - (1.0 - c * c / 2.0)).abs() < 1e-14);
    }

    #[test]
    fn zero_response_zero_mean() {
        let gp = DenseGp::new(&[0.0, 0.5, 1.0], &[0.0; 3], HalfIntegerSmoothness::HALF, &[2.0], 1.0).unwrap();
        assert_eq!(gp.posterior(&[0.3]).unwrap().0, 0.0);
    }

    #[test]
    fn block_form_matches_direct() {
        for seed in 0..50 {
            let gp = random_gp(12, 3, seed);
            let x = [0.2, 0.55, 0.9];
            let (m1, s1) = gp.posterior(&x).unwrap();
            let (m2, s2) = gp.block_posterior(&x).unwrap();
            assert!((m1 - m2).abs() <= 1e-8 * (1.0 + m1.abs()), "{m1} {m2}");
            assert!((s1 - s2).abs() <= 1e-8 * (1.0 + s1.abs()), "{s1} {s2}");
            let (l1, l2) = (gp.loglik().unwrap(), gp.loglik_block().unwrap());
            assert!((l1 - l2).abs() <= 1e-8 * l1.abs(), "{l1} {l2}");
        }
    }

    #[test]
    fn analytic_gradient_matches_fd() {
        let gp = random_gp(20, 2, 3);
        for d in 0..2 {
            let g = gp.loglik_grad(d).unwrap();
            let h1 = gp.loglik_fd_grad(d, 1e-4).unwrap();
            let h2 = gp.loglik_fd_grad(d, 5e-5).unwrap();
            // Richardson: the two central differences agree to second order in the step.
            assert!((h1 - h2).abs() <= 1e-6 * (1.0 + g.abs()), "{h1} {h2}");
            assert!((g - h2).abs() <= 1e-6 * (1.0 + g.abs()), "{g} {h2}");
        }
    }
}
