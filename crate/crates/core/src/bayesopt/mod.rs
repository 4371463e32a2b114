//! Bayesian optimization on the additive GP: acquisitions, gradient ascent and the outer loop.

pub mod acquisition;
pub mod bo_loop;
pub mod search;
pub mod testfns;

pub use acquisition::{Acquisition, AcquisitionKind, AcquisitionSpec, ModelAcquisition};
pub use bo_loop::{bo_loop, BoConfig, BoRecord, BoState, IterationTiming};
pub use search::{ascend, multi_ascend, AscentResult, SearchConfig};
pub use testfns::{TestFunction, SCHWEFEL_ARGMIN};
