//! Binary model files.
//!
//! Layout: the 8 bytes `PLSICKPT`, a little-endian `u32` format version, a
//! little-endian `u64` header length, a UTF-8 JSON header of that length,
//! then the parameters of every model as little-endian `f64`, each model
//! stored as `beta | gamma | theta`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Family;
use crate::error::{PlsiError, Result};
use crate::model::ModelParams;
use crate::neural_link::{MlpParams, MlpSpec};
use crate::trainer::FitConfig;

pub const MAGIC: &[u8; 8] = b"PLSICKPT";
pub const VERSION: u32 = 1;
const MAX_HEADER: u64 = 64 << 20;

/// Column means and sample SDs used to standardize exposures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub family: Family,
    pub mlp: MlpSpec,
    pub p: usize,
    pub q: usize,
    pub models: usize,
    pub exposures: Vec<String>,
    /// Covariate names in `gamma` order; an added intercept is listed as `(intercept)`.
    pub covariates: Vec<String>,
    pub intercept: bool,
    pub standardization: Option<Standardization>,
    pub fit_config: Option<FitConfig>,
    /// Central index range of the full-data fit, used as the default curve grid.
    pub index_range: Option<(f64, f64)>,
    pub alpha: Option<f64>,
    pub replicate_ids: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub models: Vec<ModelParams>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let h = &self.header;
        if h.models != self.models.len() {
            return Err(PlsiError::Checkpoint("header model count is stale".into()));
        }
        for m in &self.models {
            if m.p() != h.p || m.q() != h.q || m.mlp != h.mlp {
                return Err(PlsiError::Checkpoint("models disagree with the header layout".into()));
            }
        }
        let json = serde_json::to_vec(h)?;
        let mut out = Vec::with_capacity(20 + json.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for m in &self.models {
            for v in m.beta.iter().chain(&m.gamma).chain(&m.theta.flat) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| PlsiError::Checkpoint(msg.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a plsi checkpoint (bad magic bytes)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(PlsiError::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        if header_len > MAX_HEADER || 20 + header_len as usize > bytes.len() {
            return Err(bad("header length exceeds file size"));
        }
        let header_end = 20 + header_len as usize;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[20..header_end])
            .map_err(|e| PlsiError::Checkpoint(format!("header: {e}")))?;
        header.mlp.validate()?;
        let k = header.mlp.param_count();
        let per_model = header.p + header.q + k;
        let payload = &bytes[header_end..];
        if payload.len() != header.models * per_model * 8 {
            return Err(PlsiError::Checkpoint(format!(
                "payload has {} bytes, header describes {}",
                payload.len(),
                header.models * per_model * 8
            )));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let models = values
            .chunks_exact(per_model.max(1))
            .take(header.models)
            .map(|c| ModelParams {
                beta: c[..header.p].to_vec(),
                gamma: c[header.p..header.p + header.q].to_vec(),
                theta: MlpParams {
                    flat: c[header.p + header.q..].to_vec(),
                },
                mlp: header.mlp.clone(),
            })
            .collect();
        Ok(Checkpoint { header, models })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| {
            PlsiError::Argument(format!("cannot read checkpoint {}: {e}", path.display()))
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn single(&self) -> Result<&ModelParams> {
        match self.models.as_slice() {
            [m] => Ok(m),
            _ => Err(PlsiError::Checkpoint(format!(
                "expected one model, found {}",
                self.models.len()
            ))),
        }
    }
}
