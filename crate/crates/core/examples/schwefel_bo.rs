//! Bayesian optimization of the 2-D Schwefel function; prints regret and sampling concentration.

use std::time::Instant;

use kpgp_core::bayesopt::{bo_loop, BoConfig, TestFunction, SCHWEFEL_ARGMIN};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let budget: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(500);
    let f = TestFunction::SchwefelPaper;
    let cfg = BoConfig { warmup: 50, budget, noise_sd: 1.0, minimize: true, seed, ..Default::default() };
    let started = Instant::now();
    let state = bo_loop(|x| f.eval(x).map_err(|e| e.to_string()), &f.bounds(2), &cfg)?;
    let regret = f.eval(&state.recommendation)?;
    let tail = &state.history[state.history.len().saturating_sub(100)..];
    let near = tail
        .iter()
        .filter(|r| r.x.iter().all(|v| (v - SCHWEFEL_ARGMIN).abs() <= 50.0))
        .count() as f64
        / tail.len() as f64;
    println!(
        "seed {seed}: recommendation {:?} regret {regret:.3} near {near:.2} omegas {:?} secs {:.1}",
        state.recommendation,
        state.model.omegas(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}
