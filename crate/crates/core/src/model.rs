//! The full tagger: hybrid embedding, star-graph layers and per-type CRFs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EmbeddingDims, EncodedSentence, Encoder, Vocabulary};
use crate::entities::{encode_nested, EntitySet, TagSequence};
use crate::labeler::{Labeler, TypedPrediction};
use crate::numerics::{Graph, ParamStore, Var};
use crate::stargraph::{build_topology, run_layers, LayerOptions, StarGraph};
use crate::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dims: EmbeddingDims,
    pub heads: usize,
    pub depth: usize,
    pub window: usize,
    pub num_types: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dims: EmbeddingDims {
                char_dim: 16,
                token_dim: 32,
                word_dim: 32,
                pos_dim: 8,
                context_dim: 64,
                node_dim: 64,
            },
            heads: 4,
            depth: 3,
            window: 1,
            num_types: 3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let d = &self.dims;
        let widths = [
            ("char_dim", d.char_dim),
            ("token_dim", d.token_dim),
            ("word_dim", d.word_dim),
            ("pos_dim", d.pos_dim),
            ("context_dim", d.context_dim),
            ("node_dim", d.node_dim),
            ("heads", self.heads),
            ("depth", self.depth),
            ("num_types", self.num_types),
        ];
        if let Some((name, _)) = widths.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !d.node_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "node_dim {} is not divisible by heads {}",
                d.node_dim, self.heads
            )));
        }
        for (name, v) in [("char_dim", d.char_dim), ("context_dim", d.context_dim), ("node_dim", d.node_dim)] {
            if v % 2 != 0 {
                return Err(Error::Config(format!("{name} must be even, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub graph: StarGraph,
    pub labeler: Labeler,
}

impl Model {
    /// Registers every parameter in `store`. Creation order fixes parameter
    /// names and the random stream, so equal seeds give equal models.
    pub fn new<R: Rng>(store: &mut ParamStore, vocab: &Vocabulary, config: ModelConfig, rng: &mut R) -> Result<Self, Error> {
        config.validate()?;
        let encoder = Encoder::new(store, vocab, config.dims, config.num_types, rng)?;
        let graph = StarGraph::new(store, config.dims.node_dim, config.heads, config.depth, config.window, rng)?;
        let labeler = Labeler::new(store, config.dims.node_dim, config.num_types, rng)?;
        Ok(Self {
            config,
            encoder,
            graph,
            labeler,
        })
    }

    /// Text and type nodes after the last graph layer.
    pub fn node_states(&self, g: &mut Graph<'_>, sent: &EncodedSentence) -> Result<(Var, Var), Error> {
        let context = self.encoder.hybrid_embed(g, sent)?;
        let text = self.encoder.init_text_nodes(g, context)?;
        let types = self.encoder.init_type_nodes(g, context)?;
        let topology = build_topology(sent.len(), self.config.num_types, self.config.window)?;
        Ok(run_layers(g, &self.graph, text, types, &topology, self.config.depth, LayerOptions::default())?)
    }

    /// Summed per-type negative log-likelihood.
    pub fn loss(&self, g: &mut Graph<'_>, sent: &EncodedSentence, gold: &[TagSequence]) -> Result<Var, Error> {
        let (text, types) = self.node_states(g, sent)?;
        self.labeler.loss(g, text, types, gold)
    }

    pub fn predict(&self, store: &ParamStore, sent: &EncodedSentence) -> Result<TypedPrediction, Error> {
        let mut g = Graph::inference(store);
        let (text, types) = self.node_states(&mut g, sent)?;
        let text = g.value(text).clone();
        let types = g.value(types).clone();
        self.labeler.predict(store, &text, &types)
    }
}

/// One nested tag layer per type, in type order.
pub fn gold_layers(entities: &EntitySet, len: usize, num_types: usize) -> Result<Vec<TagSequence>, Error> {
    if let Some(s) = entities.iter().find(|s| s.label >= num_types) {
        return Err(Error::Config(format!(
            "entity ({}, {}) has type {} but only {num_types} types are configured",
            s.start, s.end, s.label
        )));
    }
    (0..num_types)
        .map(|t| {
            let layer: EntitySet = entities.iter().filter(|s| s.label == t).copied().collect();
            Ok(encode_nested(&layer, len, t)?)
        })
        .collect()
}
