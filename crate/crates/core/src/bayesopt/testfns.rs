//! Benchmark objectives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    /// `418.9829 - (1/D) Σ x_d sin(√|x_d|)` on `[-500, 500]^D`.
    SchwefelPaper,
    /// `10 - (1/D) Σ (x_d² - 10 cos(2π x_d))` on `[-5.12, 5.12]^D`.
    RastriginPaper,
    /// `10 D + Σ (x_d² - 10 cos(2π x_d))` on `[-5.12, 5.12]^D`.
    RastriginStandard,
}

/// Location of the Schwefel minimum in every coordinate.
pub const SCHWEFEL_ARGMIN: f64 = 420.9687;

impl TestFunction {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "schwefel_paper" => Ok(Self::SchwefelPaper),
            "rastrigin_paper" => Ok(Self::RastriginPaper),
            "rastrigin_standard" => Ok(Self::RastriginStandard),
            other => Err(Error::Domain(format!("unknown test function {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::SchwefelPaper => "schwefel_paper",
            Self::RastriginPaper => "rastrigin_paper",
            Self::RastriginStandard => "rastrigin_standard",
        }
    }

    /// Half-width `l` of the domain `[-l, l]^D`.
    pub fn half_width(self) -> f64 {
        match self {
            Self::SchwefelPaper => 500.0,
            Self::RastriginPaper | Self::RastriginStandard => 5.12,
        }
    }

    pub fn bounds(self, d: usize) -> Vec<(f64, f64)> {
        let l = self.half_width();
        vec![(-l, l); d]
    }

    pub fn eval(self, x: &[f64]) -> Result<f64> {
        if x.is_empty() {
            return Err(Error::Domain("empty input".into()));
        }
        let l = self.half_width();
        if let Some(v) = x.iter().find(|v| !(v.abs() <= l)) {
            return Err(Error::Domain(format!("{v} outside [-{l}, {l}]")));
        }
        let d = x.len() as f64;
        let rastrigin = |v: f64| v * v - 10.0 * (2.0 * std::f64::consts::PI * v).cos();
        Ok(match self {
            Self::SchwefelPaper => 418.9829 - x.iter().map(|v| v * v.abs().sqrt().sin()).sum::<f64>() / d,
            Self::RastriginPaper => 10.0 - x.iter().map(|&v| rastrigin(v)).sum::<f64>() / d,
            Self::RastriginStandard => 10.0 * d + x.iter().map(|&v| rastrigin(v)).sum::<f64>(),
        })
    }
}
