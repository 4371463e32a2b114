//! Binary model envelope.
//!
//! Layout: format version byte, little-endian `u32` header length, JSON header echoing the
//! configuration, then the merged inputs and responses as little-endian `f64`. Factorizations
//! and the caches named in the header are rebuilt on load.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdditiveGpModel, GsOptions};
use crate::error::{Error, Result};
use crate::matern::HalfIntegerSmoothness;

pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    nu: f64,
    omegas: Vec<f64>,
    sigma_y: f64,
    n: usize,
    merged_rows: usize,
    gs: GsOptions,
    mean_weights: bool,
    var_bands: bool,
    dense_m: bool,
}

impl AdditiveGpModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            nu: self.nu.nu(),
            omegas: self.omegas.clone(),
            sigma_y: self.sigma_y,
            n: self.n(),
            merged_rows: self.merged_rows,
            gs: self.gs,
            mean_weights: self.cache.b_y.is_some(),
            var_bands: self.cache.var_bands.is_some(),
            dense_m: self.cache.m_dense.is_some(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let len = u32::try_from(json.len()).map_err(|_| Error::Format("header too long".into()))?;
        let mut out = Vec::with_capacity(5 + json.len() + 8 * (self.x.len() + self.y.len()));
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&json);
        for v in self.x.iter().chain(&self.y) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (&version, rest) = bytes.split_first().ok_or_else(|| Error::Format("empty model file".into()))?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        if rest.len() < 4 {
            return Err(Error::Format("truncated header length".into()));
        }
        let (len, rest) = rest.split_at(4);
        let len = u32::from_le_bytes(len.try_into().expect("four bytes")) as usize;
        if rest.len() < len {
            return Err(Error::Format("truncated header".into()));
        }
        let (json, payload) = rest.split_at(len);
        let header: Header = serde_json::from_slice(json).map_err(|e| Error::Format(e.to_string()))?;
        let d = header.omegas.len();
        let expected = 8 * header.n * (d + 1);
        if payload.len() != expected {
            return Err(Error::Format(format!("payload is {} bytes, expected {expected}", payload.len())));
        }
        let values: Vec<f64> =
            payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes"))).collect();
        let (x, y) = values.split_at(header.n * d);
        let nu = HalfIntegerSmoothness::from_nu(header.nu)?;
        let mut model = Self::assemble(x, y, nu, &header.omegas, header.sigma_y)?;
        model.merged_rows = header.merged_rows;
        model.gs = header.gs;
        if header.mean_weights {
            model.compute_mean_weights()?;
        }
        if header.var_bands {
            model.precompute_var_bands()?;
        }
        if header.dense_m {
            model.precompute_m()?;
        }
        Ok(model)
    }

    /// Writes the envelope to `path` through a temporary file and a rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes).and_then(|()| fs::rename(&tmp, path)).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::Format(e.to_string()))?)
    }
}
