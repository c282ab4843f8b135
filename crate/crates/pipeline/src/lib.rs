//! Synthetic corpora, training, evaluation, checkpoints and benchmarks for
//! the star-graph nested entity tagger.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod gradcheck;
pub mod grammar;
pub mod metrics;
pub mod optim;
pub mod train;
pub mod vectors;

use std::path::Path;

pub use checkpoint::Checkpoint;
pub use config::Config;
pub use dataset::{Example, Record};
pub use grammar::{generate_corpus, GrammarSpec};
pub use metrics::{evaluate, EvalReport};
pub use train::{train, TrainOutcome, Trained};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Core(#[from] starner_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid grammar spec: {0}")]
    Spec(String),
    #[error("sentence {index}: {message}")]
    Data { index: usize, message: String },
    #[error("non-finite loss {loss} at epoch {epoch}, sentence {sentence}")]
    NonFiniteLoss { epoch: usize, sentence: usize, loss: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    GradCheck(String),
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Short machine-readable category used by the command line.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Core(_) => "model",
            PipelineError::Io { .. } => "io",
            PipelineError::Parse { .. } => "parse",
            PipelineError::Config(_) => "config",
            PipelineError::Spec(_) => "spec",
            PipelineError::Data { .. } => "data",
            PipelineError::NonFiniteLoss { .. } => "non-finite-loss",
            PipelineError::Checkpoint(_) => "checkpoint",
            PipelineError::GradCheck(_) => "gradcheck",
        }
    }
}

impl From<starner_core::numerics::NumericsError> for PipelineError {
    fn from(e: starner_core::numerics::NumericsError) -> Self {
        PipelineError::Core(e.into())
    }
}
