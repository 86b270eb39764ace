//! Feature batches: a (category, variant, dim) tensor of region or text
//! features, and its on-disk forms.
//!
//! Binary layout (little-endian): magic `FBT1`, then `C`, `K`, `D` as `u32`,
//! then `C*K*D` `f32` values with `c` outermost and `d` innermost. Small
//! fixtures may instead be JSON: `{"modality": "image", "values": [[[..]]]}`.

use std::fs;
use std::path::Path;

use ndarray::{Array3, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"FBT1";

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("feature batch needs C, K, D >= 1, got {0}x{1}x{2}")]
    EmptyDims(usize, usize, usize),
    #[error("feature vector ({c}, {k}) has zero or non-finite norm")]
    ZeroNormVector { c: usize, k: usize },
    #[error("ragged feature array")]
    Ragged,
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    #[default]
    Image,
    Text,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    values: Array3<f64>,
    modality: Modality,
}

impl FeatureBatch {
    pub fn new(values: Array3<f64>, modality: Modality) -> Result<Self, FeatureError> {
        let (c, k, d) = values.dim();
        if c == 0 || k == 0 || d == 0 {
            return Err(FeatureError::EmptyDims(c, k, d));
        }
        for ci in 0..c {
            for ki in 0..k {
                let n = norm(values.slice(ndarray::s![ci, ki, ..]));
                if !(n > 0.0 && n.is_finite()) {
                    return Err(FeatureError::ZeroNormVector { c: ci, k: ki });
                }
            }
        }
        Ok(Self { values, modality })
    }

    pub fn from_nested(values: &[Vec<Vec<f64>>], modality: Modality) -> Result<Self, FeatureError> {
        let c = values.len();
        let k = values.first().map_or(0, Vec::len);
        let d = values.first().and_then(|v| v.first()).map_or(0, Vec::len);
        if values.iter().any(|v| v.len() != k || v.iter().any(|x| x.len() != d)) {
            return Err(FeatureError::Ragged);
        }
        let flat: Vec<f64> = values.iter().flatten().flatten().copied().collect();
        let arr = Array3::from_shape_vec((c, k, d), flat).map_err(|_| FeatureError::Ragged)?;
        Self::new(arr, modality)
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    /// (categories, variants, dims)
    pub fn dims(&self) -> (usize, usize, usize) {
        self.values.dim()
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        let (c, k, _) = self.dims();
        (0..c)
            .map(|ci| (0..k).map(|ki| self.values.slice(ndarray::s![ci, ki, ..]).to_vec()).collect())
            .collect()
    }

    pub fn read(path: &Path) -> Result<Self, FeatureError> {
        let bytes = fs::read(path).map_err(|source| FeatureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if bytes.starts_with(MAGIC) {
            Self::decode_binary(&bytes).map_err(|reason| FeatureError::Format {
                path: path.display().to_string(),
                reason,
            })
        } else {
            #[derive(Deserialize)]
            struct Json {
                #[serde(default)]
                modality: Modality,
                values: Vec<Vec<Vec<f64>>>,
            }
            let j: Json = serde_json::from_slice(&bytes).map_err(|e| FeatureError::Format {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
            Self::from_nested(&j.values, j.modality)
        }
    }

    pub fn encode_binary(&self) -> Vec<u8> {
        let (c, k, d) = self.dims();
        let mut out = Vec::with_capacity(16 + 4 * c * k * d);
        out.extend_from_slice(MAGIC);
        for n in [c, k, d] {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        for v in self.values.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn decode_binary(bytes: &[u8]) -> Result<Self, String> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err("missing FBT1 header".into());
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (c, k, d) = (dim(0), dim(1), dim(2));
        let n = c.checked_mul(k).and_then(|x| x.checked_mul(d)).ok_or("dimension overflow")?;
        if bytes.len() != 16 + 4 * n {
            return Err(format!("expected {} bytes of data, found {}", 4 * n, bytes.len() - 16));
        }
        let vals: Vec<f64> = bytes[16..]
            .chunks_exact(4)
            .map(|ch| f32::from_le_bytes(ch.try_into().unwrap()) as f64)
            .collect();
        let arr = Array3::from_shape_vec((c, k, d), vals).map_err(|e| e.to_string())?;
        Self::new(arr, Modality::Image).map_err(|e| e.to_string())
    }

    pub fn write_binary(&self, path: &Path) -> Result<(), FeatureError> {
        fs::write(path, self.encode_binary()).map_err(|source| FeatureError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<(), FeatureError> {
        let j = serde_json::json!({ "modality": self.modality, "values": self.to_nested() });
        fs::write(path, serde_json::to_string_pretty(&j).expect("serializes")).map_err(|source| FeatureError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

pub(crate) fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}
