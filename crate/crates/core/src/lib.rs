//! Additive Matérn Gaussian-process regression and Bayesian optimization on banded
//! kernel-packet factorizations.

pub mod banded;
pub mod bayesopt;
pub mod error;
pub mod estimators;
pub mod gp;
pub mod matern;
#[cfg(feature = "oracle")]
pub mod oracle;
pub mod packets;
pub mod selinv;

pub use banded::{band_logdet, band_matvec, band_solve, BandedLu, BandedMatrix};
pub use bayesopt::{bo_loop, AcquisitionKind, AcquisitionSpec, BoConfig, BoState, SearchConfig, TestFunction};
pub use error::{Error, Result};
pub use matern::{matern_domega, matern_dx, matern_eval, HalfIntegerSmoothness, KernelParams};
pub use packets::{
    eval_basis, eval_basis_grad, grad_factorize, kp_factorize, solve_kp_coeffs, GradFactor, KpFactor, KpKind, KpOrder,
    SortedAxis, SparseBasisVector,
};
pub use selinv::{selected_inverse_band, BandWindow};
pub use estimators::{hutchinson_trace, logdet_estimate, power_method, EstimatorOptions, LinearOperator};
pub use gp::{train, AdditiveGpModel, GsOptions, GsReport, LogdetMode, PredictionCache, QueryHint, TraceMode, TrainOptions, TrainReport, VarMode};
