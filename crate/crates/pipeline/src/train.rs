//! One-sentence-per-step training and model-level prediction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use starner_core::encoder::{EncodedSentence, Vocabulary};
use starner_core::entities::{EntitySet, TagSequence};
use starner_core::model::{gold_layers, Model};
use starner_core::numerics::{Graph, ParamStore};

use crate::config::Config;
use crate::dataset::Example;
use crate::metrics::{evaluate, EvalReport};
use crate::optim::{AdamW, Schedule};
use crate::vectors::import_word_vectors;
use crate::PipelineError;

/// A model together with everything needed to run it.
#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub config: Config,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub model: Model,
}

impl Trained {
    /// Freshly initialized parameters, seeded by `config.seed`.
    pub fn init(config: Config, vocab: Vocabulary) -> Result<Self, PipelineError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let model = Model::new(&mut store, &vocab, config.model(), &mut rng)?;
        Ok(Self {
            config,
            vocab,
            store,
            model,
        })
    }

    pub fn encode(&self, tokens: &[String], pos: Option<&[String]>) -> EncodedSentence {
        self.vocab.encode(tokens, pos)
    }

    pub fn predict(&self, tokens: &[String], pos: Option<&[String]>) -> Result<EntitySet, PipelineError> {
        let sent = self.encode(tokens, pos);
        Ok(self.model.predict(&self.store, &sent)?.entities)
    }

    pub fn predict_all(&self, examples: &[Example]) -> Result<Vec<EntitySet>, PipelineError> {
        examples
            .iter()
            .map(|ex| self.predict(&ex.tokens, ex.pos.as_deref()))
            .collect()
    }

    pub fn evaluate(&self, examples: &[Example]) -> Result<EvalReport, PipelineError> {
        let predicted = self.predict_all(examples)?;
        let gold: Vec<EntitySet> = examples.iter().map(|e| e.entities.clone()).collect();
        Ok(evaluate(&gold, &predicted, &self.config.type_names))
    }
}

/// Progress after one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Set on epochs where the training set was scored.
    pub train_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trained: Trained,
    /// Loss of every optimization step, in order.
    pub loss_trace: Vec<f64>,
    pub epochs: Vec<EpochSummary>,
}

impl TrainOutcome {
    pub fn epochs_run(&self) -> usize {
        self.epochs.len()
    }
}

pub fn train(config: &Config, examples: &[Example]) -> Result<TrainOutcome, PipelineError> {
    train_with(config, examples, |_| {})
}

/// Trains from scratch, calling `on_epoch` after every epoch.
///
/// The schedule spans `config.epochs` full epochs even when early stopping
/// ends the run sooner, so a stopped run is a prefix of the full one.
pub fn train_with(
    config: &Config,
    examples: &[Example],
    mut on_epoch: impl FnMut(&EpochSummary),
) -> Result<TrainOutcome, PipelineError> {
    config.validate()?;
    if examples.is_empty() {
        return Err(PipelineError::Data {
            index: 0,
            message: "training set is empty".into(),
        });
    }
    let num_types = config.type_names.len();
    let mut gold: Vec<Vec<TagSequence>> = Vec::with_capacity(examples.len());
    for (index, ex) in examples.iter().enumerate() {
        let data_err = |message: String| PipelineError::Data { index, message };
        ex.lint().map_err(data_err)?;
        gold.push(gold_layers(&ex.entities, ex.len(), num_types).map_err(|e| data_err(e.to_string()))?);
    }

    let vocab = Vocabulary::build(examples.iter().map(|e| (e.tokens.as_slice(), e.pos.as_deref())));
    let mut trained = Trained::init(config.clone(), vocab)?;
    if let Some(path) = &config.word_vectors {
        let table = trained.model.encoder.tables.words;
        import_word_vectors(std::path::Path::new(path), &trained.vocab, &mut trained.store, table)?;
    }
    let encoded: Vec<EncodedSentence> = examples
        .iter()
        .map(|e| trained.encode(&e.tokens, e.pos.as_deref()))
        .collect();

    let schedule = Schedule::new(config.learning_rate, config.epochs * examples.len(), config.warmup_fraction);
    let mut optimizer = AdamW::new(&trained.store, config.weight_decay);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut loss_trace = Vec::with_capacity(schedule.total_steps);
    let mut epochs = Vec::new();

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for &i in &order {
            let mut g = Graph::new(&trained.store);
            let loss = trained.model.loss(&mut g, &encoded[i], &gold[i])?;
            let value = g.value(loss).item()?;
            if !value.is_finite() {
                return Err(PipelineError::NonFiniteLoss {
                    epoch,
                    sentence: i,
                    loss: value,
                });
            }
            let mut grads = g.backward(loss)?;
            drop(g);
            grads.clip_global_norm(config.clip_norm);
            let lr = schedule.rate(loss_trace.len());
            optimizer.step(&mut trained.store, &grads, lr);
            loss_trace.push(value);
            total += value;
        }
        let train_f1 = match config.stop_at_train_f1 {
            Some(_) if (epoch + 1) % config.eval_every == 0 || epoch + 1 == config.epochs => {
                Some(trained.evaluate(examples)?.f1())
            }
            _ => None,
        };
        let summary = EpochSummary {
            epoch,
            mean_loss: total / examples.len() as f64,
            train_f1,
        };
        on_epoch(&summary);
        epochs.push(summary);
        if let (Some(target), Some(f1)) = (config.stop_at_train_f1, train_f1) {
            if f1 >= target {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        trained,
        loss_trace,
        epochs,
    })
}
