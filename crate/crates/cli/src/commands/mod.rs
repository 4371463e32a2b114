pub mod bench;
pub mod bo;
pub mod fit;
pub mod loglik;
pub mod predict;
