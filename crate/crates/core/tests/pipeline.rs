//! End-to-end use of the public API: assemble, train, cache, persist, predict, optimize.

use kpgp_core::bayesopt::{bo_loop, BoConfig, TestFunction};
use kpgp_core::{train, AdditiveGpModel, HalfIntegerSmoothness, LogdetMode, QueryHint, TraceMode, TrainOptions, VarMode};
use kpgp_core::oracle::DenseGp as Reference;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [VarMode; 3] = [VarMode::Banded, VarMode::FullM, VarMode::GsPerQuery];

fn sample(n: usize, d: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = x.chunks(d).map(|p| p.iter().map(|v| (3.0 * v).sin()).sum::<f64>() + rng.random_range(-0.05..0.05)).collect();
    (x, y)
}

fn converged_gs(model: &mut AdditiveGpModel) {
    // Backfitting contracts slowly along shifts of a constant between components, and the residual
    // floor for smooth kernels is near 1e-11.
    model.gs.max_sweeps = Some(20_000);
    model.gs.tol = 1e-9;
}

fn cached(model: &mut AdditiveGpModel) {
    converged_gs(model);
    let report = model.compute_mean_weights().unwrap();
    assert!(report.converged, "residual {}", report.residual);
    model.build_caches(true).unwrap();
}

#[test]
fn trained_model_survives_a_round_trip_and_matches_the_dense_posterior() {
    let nu = HalfIntegerSmoothness::THREE_HALVES;
    let (mut x, mut y) = sample(40, 3, 1);
    // A repeated input row exercises duplicate merging.
    x.extend_from_within(0..3);
    y.push(y[0] + 0.01);
    let mut start = AdditiveGpModel::assemble(&x, &y, nu, &[5.0, 5.0, 5.0], 0.3).unwrap();
    converged_gs(&mut start);
    let opts = TrainOptions { max_iters: 5, logdet: LogdetMode::Exact, trace: TraceMode::Exact, ..Default::default() };
    let (mut model, report) = train(&start, &opts).unwrap();
    assert!(report.accepted > 0, "{report:?}");
    assert!(report.trajectory.windows(2).all(|w| w[1] >= w[0]), "{:?}", report.trajectory);
    let reference = Reference::new(model.x(), model.y(), nu, model.omegas(), 0.3).unwrap();
    let l = *report.trajectory.last().unwrap();
    assert!((l - reference.loglik().unwrap()).abs() <= 1e-6 * l.abs().max(1.0));
    assert_eq!(report.omega_path.last().unwrap().as_slice(), model.omegas());
    assert_eq!(model.merged_rows(), 1);
    cached(&mut model);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    model.save(&path).unwrap();
    let loaded = AdditiveGpModel::load(&path).unwrap();
    assert_eq!(loaded.omegas(), model.omegas());

    // Repeated rows are averaged at ingestion, so the reference sees the merged data.
    let dense = Reference::new(model.x(), model.y(), nu, model.omegas(), 0.3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut hint = QueryHint::new(3, 2 * nu.q() + 3);
    for _ in 0..40 {
        let q: Vec<f64> = (0..3).map(|_| rng.random_range(-1.2..1.2)).collect();
        let (mean, var) = dense.posterior(&q).unwrap();
        let m = loaded.predict_mean(&q).unwrap();
        assert_eq!(m.to_bits(), model.predict_mean(&q).unwrap().to_bits());
        assert_eq!(m.to_bits(), loaded.predict_mean_hinted(&q, &mut hint).unwrap().to_bits());
        assert!((m - mean).abs() <= 1e-6 * (1.0 + mean.abs()), "mean {m} vs {mean}");
        for mode in MODES {
            let v = loaded.predict_var(&q, mode).unwrap();
            assert_eq!(v.to_bits(), model.predict_var(&q, mode).unwrap().to_bits());
            assert!((v - var).abs() <= 1e-6 * var.max(1e-3), "{mode:?}: var {v} vs {var}");
        }
    }
}

#[test]
fn damaged_model_bytes_are_rejected() {
    let (x, y) = sample(30, 2, 2);
    let mut model = AdditiveGpModel::assemble(&x, &y, HalfIntegerSmoothness::HALF, &[3.0, 3.0], 0.1).unwrap();
    cached(&mut model);
    let bytes = model.to_bytes().unwrap();
    assert!(AdditiveGpModel::from_bytes(&bytes).is_ok());
    assert!(AdditiveGpModel::from_bytes(&bytes[..bytes.len() / 2]).is_err());
    assert!(AdditiveGpModel::from_bytes(b"not a model").is_err());
}

#[test]
fn optimization_run_is_reproducible_and_well_formed() {
    let f = TestFunction::RastriginStandard;
    let domain = f.bounds(2);
    let cfg = BoConfig { warmup: 20, budget: 15, minimize: true, seed: 4, ..Default::default() };
    let run = || bo_loop(|x| f.eval(x).map_err(|e| e.to_string()), &domain, &cfg).unwrap();
    let a = run();
    let b = run();
    assert_eq!(a.history.len(), 35);
    assert_eq!(a.history.iter().filter(|r| r.iteration.is_some()).count(), 15);
    assert!(a.history.windows(2).all(|w| w[1].best_observed <= w[0].best_observed));
    for r in &a.history {
        assert!(r.x.iter().zip(&domain).all(|(v, (lo, hi))| lo <= v && v <= hi));
    }
    assert!(a.recommendation.iter().zip(&domain).all(|(v, (lo, hi))| lo <= v && v <= hi));
    let xs = |s: &kpgp_core::BoState| s.history.iter().map(|r| r.x.clone()).collect::<Vec<_>>();
    assert_eq!(xs(&a), xs(&b));
    assert_eq!(a.recommendation, b.recommendation);
}
