//! Versioned JSON container: architecture plus base64-encoded little-endian `f64` arrays.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Architecture, Network, NnError, Params, Tensor};

pub const FORMAT: &str = "satdev.network";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Container {
    format: String,
    version: u32,
    architecture: Architecture,
    decay_multipliers: Vec<f64>,
    parameters: Vec<Option<StoredParams>>,
}

#[derive(Serialize, Deserialize)]
struct StoredParams {
    weight_shape: Vec<usize>,
    bias_shape: Vec<usize>,
    weight: String,
    bias: String,
    weight_velocity: String,
    bias_velocity: String,
}

fn encode(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

fn decode(text: &str, shape: &[usize]) -> Result<Tensor, NnError> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| NnError::Format(format!("base64: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(NnError::Format("array length is not a multiple of 8".into()));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape.to_vec(), values)
}

impl Network {
    pub fn to_json(&self) -> String {
        let container = Container {
            format: FORMAT.into(),
            version: VERSION,
            architecture: self.architecture().clone(),
            decay_multipliers: self.decay_multipliers().to_vec(),
            parameters: self
                .params()
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| StoredParams {
                        weight_shape: p.weight.shape().to_vec(),
                        bias_shape: p.bias.shape().to_vec(),
                        weight: encode(p.weight.data()),
                        bias: encode(p.bias.data()),
                        weight_velocity: encode(p.weight_velocity.data()),
                        bias_velocity: encode(p.bias_velocity.data()),
                    })
                })
                .collect(),
        };
        serde_json::to_string_pretty(&container).expect("network container serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let c: Container =
            serde_json::from_str(text).map_err(|e| NnError::Format(e.to_string()))?;
        if c.format != FORMAT {
            return Err(NnError::Format(format!("unexpected format tag {:?}", c.format)));
        }
        if c.version != VERSION {
            return Err(NnError::Format(format!("unsupported version {}", c.version)));
        }
        let params = c
            .parameters
            .into_iter()
            .map(|p| {
                p.map(|p| {
                    Ok(Params {
                        weight: decode(&p.weight, &p.weight_shape)?,
                        bias: decode(&p.bias, &p.bias_shape)?,
                        weight_velocity: decode(&p.weight_velocity, &p.weight_shape)?,
                        bias_velocity: decode(&p.bias_velocity, &p.bias_shape)?,
                    })
                })
                .transpose()
            })
            .collect::<Result<Vec<_>, NnError>>()?;
        Network::from_parts(c.architecture, params, c.decay_multipliers)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
