use std::path::Path;

use serde::{Deserialize, Serialize};
use starner_core::encoder::EmbeddingDims;
use starner_core::labeler::MASK_SCORE;
use starner_core::model::ModelConfig;

use crate::PipelineError;

/// Model shape plus everything the training loop needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub dims: EmbeddingDims,
    pub heads: usize,
    pub depth: usize,
    pub window: usize,
    pub type_names: Vec<String>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of all steps spent warming the learning rate up from zero.
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    /// Score of illegal CRF transitions. Only the built-in value is accepted.
    pub mask_score: f64,
    /// Stop once training-set micro F1 reaches this value.
    pub stop_at_train_f1: Option<f64>,
    /// Epochs between training-set evaluations when early stopping is on.
    pub eval_every: usize,
    /// Optional whitespace-separated word vectors of width `dims.word_dim`.
    pub word_vectors: Option<String>,
}

impl Default for Config {
    fn default() -> Self {
        let model = ModelConfig::default();
        Self {
            dims: model.dims,
            heads: model.heads,
            depth: model.depth,
            window: model.window,
            type_names: (0..model.num_types).map(|t| format!("T{t}")).collect(),
            learning_rate: 1e-3,
            epochs: 300,
            seed: 0,
            warmup_fraction: 0.1,
            weight_decay: 0.01,
            clip_norm: 1.0,
            mask_score: MASK_SCORE,
            stop_at_train_f1: None,
            eval_every: 5,
            word_vectors: None,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let config: Config = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            dims: self.dims,
            heads: self.heads,
            depth: self.depth,
            window: self.window,
            num_types: self.type_names.len(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.model().validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        let bad = |msg: String| Err(PipelineError::Config(msg));
        let mut names = self.type_names.clone();
        names.sort();
        names.dedup();
        if names.len() != self.type_names.len() {
            return bad("type names must be distinct".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be finite and non-negative", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad(format!("warmup_fraction {} outside [0, 1]", self.warmup_fraction));
        }
        if !(self.weight_decay >= 0.0) || !(self.clip_norm > 0.0) {
            return bad("weight_decay must be non-negative and clip_norm positive".into());
        }
        if self.mask_score != MASK_SCORE {
            return bad(format!("mask_score must be {MASK_SCORE}, got {}", self.mask_score));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        Ok(())
    }

    pub fn type_id(&self, name: &str) -> Option<usize> {
        self.type_names.iter().position(|t| t == name)
    }
}
