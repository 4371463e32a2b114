//! `kpgp`: fit, query and optimize additive Matérn Gaussian processes on banded kernel-packet
//! factorizations.

mod commands;
mod config;
mod data;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use kpgp_core::VarMode;

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "kpgp", version, about)]
struct Cli {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    var_mode: Option<VarModeArg>,
    /// Dense log-determinant and gradient trace; small problems only.
    #[arg(long, global = true)]
    exact_logdet: bool,
    /// Retrain `ω` every this many BO iterations; 1 retrains every iteration.
    #[arg(long, global = true)]
    retrain_every: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VarModeArg {
    Banded,
    #[value(name = "full_m")]
    FullM,
    Gs,
}

impl From<VarModeArg> for VarMode {
    fn from(v: VarModeArg) -> Self {
        match v {
            VarModeArg::Banded => Self::Banded,
            VarModeArg::FullM => Self::FullM,
            VarModeArg::Gs => Self::GsPerQuery,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on a CSV with header x1..xD,y; writes model.bin, report.json and timings.json.
    Fit {
        data: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Posterior mean and variance at the points of a CSV with header x1..xD.
    Predict {
        model: PathBuf,
        points: PathBuf,
        #[arg(long, default_value = "predictions.csv")]
        out: PathBuf,
    },
    /// Log-likelihood and its gradient for a saved model, as JSON on stdout.
    Loglik { model: PathBuf },
    /// RMSE over sizes and repetitions; writes bench.csv, bench_summary.csv and bench_timings.csv.
    Bench {
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Bayesian optimization of a test function; writes trace.csv, timings.csv and summary.json.
    Bo {
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

impl Cli {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(mode) = self.var_mode {
            cfg.var_mode = mode.into();
        }
        if self.exact_logdet {
            cfg.exact_logdet = true;
        }
        if let Some(every) = self.retrain_every {
            cfg.retrain_every = every;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn run(&self) -> Result<()> {
        if let Some(threads) = self.threads {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
        }
        let cfg = self.run_config()?;
        match &self.command {
            Command::Fit { data, out } => commands::fit::run(&cfg, data, out),
            Command::Predict { model, points, out } => commands::predict::run(&cfg, model, points, out),
            Command::Loglik { model } => commands::loglik::run(&cfg, model),
            Command::Bench { out } => commands::bench::run(&cfg, out),
            Command::Bo { out } => commands::bo::run(&cfg, out),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.run() {
        Ok(()) => ExitCode::from(exit::OK),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit::code_for(&err))
        }
    }
}
