//! `kpgp bench`: RMSE of fitted models on a test function over sizes and repetitions.

use std::path::Path;
use std::time::Instant;

use anyhow::Result;
use kpgp_core::estimators::stream_rng;
use kpgp_core::{train, AdditiveGpModel};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::RunConfig;
use crate::data::write_atomic;

/// `sqrt(mean((pred - truth)²))`.
pub fn rmse(pred: &[f64], truth: &[f64]) -> f64 {
    let sum: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    (sum / pred.len() as f64).sqrt()
}

/// Population standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub rmse: f64,
    pub train_secs: f64,
    pub predict_secs: f64,
}

/// One fit on `n` uniform samples with noise, scored on fresh uniform test points.
pub fn run_one(cfg: &RunConfig, n: usize, rep: usize) -> Result<BenchRow> {
    let b = &cfg.bench;
    let seed = if b.shared_seed { cfg.seed } else { cfg.seed.wrapping_add(rep as u64) };
    let mut rng = stream_rng(seed, n as u64);
    let noise = Normal::new(0.0, b.noise_sd)?;
    let l = b.function.half_width();
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> { (0..b.dims).map(|_| rng.random_range(-l..l)).collect() };
    let mut x = Vec::with_capacity(n * b.dims);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let p = draw(&mut rng);
        y.push(b.function.eval(&p)? + noise.sample(&mut rng));
        x.extend(p);
    }
    let tests: Vec<Vec<f64>> = (0..b.test_points).map(|_| draw(&mut rng)).collect();

    let started = Instant::now();
    let omegas = cfg.omegas(&vec![2.0 * l; b.dims])?;
    let mut model = AdditiveGpModel::assemble(&x, &y, cfg.nu()?, &omegas, cfg.sigma_y)?;
    model.gs = cfg.gs;
    let opts = kpgp_core::TrainOptions { seed, ..cfg.train_options() };
    let (mut model, _) = train(&model, &opts)?;
    model.gs = cfg.gs;
    model.compute_mean_weights()?;
    let train_secs = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let pred = tests.iter().map(|p| model.predict_mean(p)).collect::<kpgp_core::Result<Vec<_>>>()?;
    let predict_secs = started.elapsed().as_secs_f64();
    let truth = tests.iter().map(|p| b.function.eval(p)).collect::<kpgp_core::Result<Vec<_>>>()?;
    Ok(BenchRow { n, rep, seed, rmse: rmse(&pred, &truth), train_secs, predict_secs })
}

/// Writes `bench.csv`, `bench_summary.csv` and `bench_timings.csv` into `out`.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<()> {
    let b = &cfg.bench;
    let mut rows = Vec::new();
    for &n in &b.sizes {
        for rep in 0..b.reps {
            rows.push(run_one(cfg, n, rep)?);
        }
    }
    std::fs::create_dir_all(out)?;
    let name = b.function.name();
    write_atomic(&out.join("bench.csv"), |w| {
        writeln!(w, "function,d,n,rep,seed,rmse")?;
        for r in &rows {
            writeln!(w, "{name},{},{},{},{},{}", b.dims, r.n, r.rep, r.seed, r.rmse)?;
        }
        Ok(())
    })?;
    write_atomic(&out.join("bench_summary.csv"), |w| {
        writeln!(w, "function,d,n,reps,rmse_mean,rmse_std")?;
        for &n in &b.sizes {
            let rmses: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.rmse).collect();
            let mean = rmses.iter().sum::<f64>() / rmses.len() as f64;
            writeln!(w, "{name},{},{n},{},{mean},{}", b.dims, rmses.len(), population_std(&rmses))?;
        }
        Ok(())
    })?;
    write_atomic(&out.join("bench_timings.csv"), |w| {
        writeln!(w, "n,rep,train_secs,predict_secs")?;
        for r in &rows {
            writeln!(w, "{},{},{},{}", r.n, r.rep, r.train_secs, r.predict_secs)?;
        }
        Ok(())
    })
}
