//! Process exit codes.

use crate::data::ParseError;

pub const OK: u8 = 0;
pub const OTHER: u8 = 1;
pub const PARSE: u8 = 2;
pub const NUMERIC: u8 = 3;
pub const SIZE: u8 = 4;

/// Exit code for the first classifiable cause in the chain.
pub fn code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ParseError>() || cause.is::<csv::Error>() || cause.is::<serde_json::Error>() {
            return PARSE;
        }
        if let Some(e) = cause.downcast_ref::<kpgp_core::Error>() {
            return match e {
                kpgp_core::Error::TooLarge { .. } | kpgp_core::Error::Size { .. } => SIZE,
                kpgp_core::Error::Domain(_)
                | kpgp_core::Error::Precondition(_)
                | kpgp_core::Error::DimensionMismatch { .. }
                | kpgp_core::Error::Format(_) => PARSE,
                kpgp_core::Error::Conditioning(_)
                | kpgp_core::Error::Singular(_)
                | kpgp_core::Error::NonFinite(_)
                | kpgp_core::Error::State(_)
                | kpgp_core::Error::Estimator(_) => NUMERIC,
            };
        }
    }
    OTHER
}
