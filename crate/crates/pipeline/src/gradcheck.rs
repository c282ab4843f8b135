//! Finite-difference check of the full model loss on one generated sentence.

use starner_core::model::gold_layers;
use starner_core::numerics::{grad_check, GradCheckReport};

use crate::config::Config;
use crate::grammar::{generate_corpus, GrammarSpec};
use crate::train::Trained;
use crate::PipelineError;

/// Builds a `len`-token sentence with nested entities from the synthetic
/// grammar, initializes the configured model on it and compares gradients.
pub fn full_model_gradcheck(
    config: &Config,
    len: usize,
    epsilon: f64,
    coords_per_param: usize,
) -> Result<GradCheckReport, PipelineError> {
    let num_types = config.type_names.len();
    let spec = GrammarSpec {
        sentences: 1,
        num_types,
        min_len: len,
        max_len: len,
        entity_rate: 0.6,
        p_nst: 0.4,
        p_ndt: if num_types > 1 { 0.3 } else { 0.0 },
        p_me: 0.0,
        max_depth: 2.min(len.div_ceil(2)),
        seed: config.seed,
        ..GrammarSpec::default()
    };
    let example = generate_corpus(&spec)?.remove(0);
    let vocab = starner_core::encoder::Vocabulary::build([(example.tokens.as_slice(), None)]);
    let trained = Trained::init(config.clone(), vocab)?;
    let sent = trained.encode(&example.tokens, None);
    let gold = gold_layers(&example.entities, example.len(), num_types)?;
    let report = grad_check(
        &trained.store,
        |g| trained.model.loss(g, &sent, &gold),
        epsilon,
        coords_per_param,
        config.seed,
    )?;
    Ok(report)
}
