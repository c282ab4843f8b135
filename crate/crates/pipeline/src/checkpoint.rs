//! Single-document JSON checkpoints. Parameter arrays are base64-encoded
//! little-endian `f64`s keyed by parameter name, so a save, load, save cycle
//! reproduces the same bytes.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use starner_core::encoder::Vocabulary;
use starner_core::numerics::Tensor;

use crate::config::Config;
use crate::train::Trained;
use crate::PipelineError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub config: Config,
    pub vocab: Vocabulary,
    pub params: Vec<SavedParam>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SavedParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: String,
}

fn encode_f64s(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode_f64s(text: &str) -> Result<Vec<f64>, String> {
    let bytes = STANDARD.decode(text).map_err(|e| e.to_string())?;
    if bytes.len() % 8 != 0 {
        return Err(format!("{} bytes is not a whole number of f64s", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

impl Checkpoint {
    pub fn from_trained(t: &Trained) -> Self {
        Self {
            version: FORMAT_VERSION,
            config: t.config.clone(),
            vocab: t.vocab.clone(),
            params: t
                .store
                .iter()
                .map(|(_, p)| SavedParam {
                    name: p.name.clone(),
                    shape: p.tensor.shape().to_vec(),
                    data: encode_f64s(p.tensor.data()),
                })
                .collect(),
        }
    }

    /// Rebuilds the model and overwrites every parameter from the file.
    pub fn restore(&self) -> Result<Trained, PipelineError> {
        let bad = |m: String| PipelineError::Checkpoint(m);
        if self.version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {}", self.version)));
        }
        let mut vocab = self.vocab.clone();
        vocab.reindex();
        let mut trained = Trained::init(self.config.clone(), vocab)?;
        if self.params.len() != trained.store.len() {
            return Err(bad(format!(
                "{} parameters saved but the configured model has {}",
                self.params.len(),
                trained.store.len()
            )));
        }
        for p in &self.params {
            let id = trained
                .store
                .id(&p.name)
                .ok_or_else(|| bad(format!("unknown parameter {:?}", p.name)))?;
            let expected = trained.store.tensor(id).shape().to_vec();
            if p.shape != expected {
                return Err(bad(format!("{}: shape {:?}, model expects {:?}", p.name, p.shape, expected)));
            }
            let data = decode_f64s(&p.data).map_err(|e| bad(format!("{}: {e}", p.name)))?;
            let tensor = Tensor::new(p.shape.clone(), data).map_err(|e| bad(format!("{}: {e}", p.name)))?;
            *trained.store.tensor_mut(id) = tensor;
        }
        Ok(trained)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        std::fs::write(path, self.to_json()).map_err(|e| PipelineError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_survive_base64_exactly() {
        let v = [0.1, -0.0, f64::MIN_POSITIVE, 1e308, std::f64::consts::PI];
        let back = decode_f64s(&encode_f64s(&v)).unwrap();
        assert_eq!(v.map(f64::to_bits).to_vec(), back.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert!(decode_f64s("AAAA").is_err());
    }
}
