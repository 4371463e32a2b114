//! Fixtures shared by the benchmarks.

use kpgp_core::{AdditiveGpModel, HalfIntegerSmoothness, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Row-major `n × d` uniform points on `[0, 1]^d`.
pub fn uniform_points(n: usize, d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * d).map(|_| rng.random_range(0.0..1.0)).collect()
}

/// Additive smooth target `Σ_k sin(6 x_k)`.
pub fn target(x: &[f64]) -> f64 {
    x.iter().map(|v| (6.0 * v).sin()).sum()
}

/// Model on `n` uniform points with mean weights from a fixed number of sweeps.
pub fn fitted_model(n: usize, d: usize, nu: HalfIntegerSmoothness, sweeps: usize) -> Result<AdditiveGpModel> {
    let x = uniform_points(n, d, n as u64);
    let y: Vec<f64> = x.chunks(d).map(target).collect();
    let mut model = AdditiveGpModel::assemble(&x, &y, nu, &vec![20.0; d], 0.1)?;
    model.gs.max_sweeps = Some(sweeps);
    model.gs.tol = f64::MIN_POSITIVE;
    model.compute_mean_weights()?;
    Ok(model)
}

/// Queries visited in order of the first coordinate, as a line search would.
pub fn sorted_queries(count: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut qs: Vec<Vec<f64>> = uniform_points(count, d, seed).chunks(d).map(<[f64]>::to_vec).collect();
    qs.sort_by(|a, b| a[0].total_cmp(&b[0]));
    qs
}
