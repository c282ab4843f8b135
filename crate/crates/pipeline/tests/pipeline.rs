use starner_core::encoder::EmbeddingDims;
use starner_core::entities::{classify_pair, is_representable, split_by_type, validate_entity_set, NestingRelation};
use starner_pipeline::checkpoint::Checkpoint;
use starner_pipeline::dataset::{parse_records, to_examples};
use starner_pipeline::train::{train, Trained};
use starner_pipeline::{generate_corpus, Config, Example, GrammarSpec, PipelineError};

fn tiny_config(epochs: usize) -> Config {
    Config {
        dims: EmbeddingDims {
            char_dim: 4,
            token_dim: 4,
            word_dim: 4,
            pos_dim: 2,
            context_dim: 8,
            node_dim: 8,
        },
        heads: 2,
        depth: 1,
        epochs,
        ..Config::default()
    }
}

fn small_corpus(seed: u64) -> Vec<Example> {
    generate_corpus(&GrammarSpec {
        sentences: 6,
        max_len: 10,
        seed,
        ..GrammarSpec::default()
    })
    .unwrap()
}

fn relations(ex: &Example) -> Vec<NestingRelation> {
    let spans: Vec<_> = ex.entities.iter().collect();
    let mut out = Vec::new();
    for i in 0..spans.len() {
        for j in i + 1..spans.len() {
            out.push(classify_pair(spans[i], spans[j]).unwrap());
        }
    }
    out
}

#[test]
fn generator_is_deterministic_and_sound() {
    let spec = GrammarSpec {
        sentences: 300,
        ..GrammarSpec::default()
    };
    let a = generate_corpus(&spec).unwrap();
    assert_eq!(a, generate_corpus(&spec).unwrap());
    assert_ne!(a, generate_corpus(&GrammarSpec { seed: 1, ..spec.clone() }).unwrap());
    let mut seen = std::collections::HashSet::new();
    for ex in &a {
        assert!((spec.min_len..=spec.max_len).contains(&ex.len()));
        assert!(validate_entity_set(&ex.entities, ex.len()).is_empty());
        for (_, layer) in split_by_type(&ex.entities) {
            assert!(is_representable(&layer, ex.len()));
        }
        for r in relations(ex) {
            assert_ne!(r, NestingRelation::OverlapSameType);
            seen.insert(r);
        }
    }
    for r in [
        NestingRelation::MultiLabel,
        NestingRelation::NestedSameType,
        NestingRelation::NestedDifferentType,
    ] {
        assert!(seen.contains(&r), "{r:?} never generated");
    }
}

#[test]
fn flat_only_and_multi_label_only_specs() {
    let flat = GrammarSpec {
        sentences: 100,
        p_nst: 0.0,
        p_ndt: 0.0,
        p_me: 0.0,
        ..GrammarSpec::default()
    };
    for ex in generate_corpus(&flat).unwrap() {
        assert!(relations(&ex).iter().all(|r| r.is_separate()), "{:?}", ex.entities);
    }

    let me = GrammarSpec {
        sentences: 100,
        p_nst: 0.0,
        p_ndt: 0.0,
        p_me: 1.0,
        ..GrammarSpec::default()
    };
    let corpus = generate_corpus(&me).unwrap();
    assert!(corpus.iter().any(|e| !e.entities.is_empty()));
    for ex in corpus {
        for span in &ex.entities {
            let labels = ex.entities.iter().filter(|o| o.same_extent(span)).count();
            assert!(labels >= 2, "{span} carries one label");
        }
    }
}

#[test]
fn infeasible_specs_are_rejected() {
    let bad = [
        GrammarSpec {
            max_depth: 6,
            max_len: 10,
            ..GrammarSpec::default()
        },
        GrammarSpec {
            min_len: 9,
            max_len: 8,
            ..GrammarSpec::default()
        },
        GrammarSpec {
            p_nst: 0.7,
            p_ndt: 0.5,
            ..GrammarSpec::default()
        },
        GrammarSpec {
            p_me: 1.5,
            ..GrammarSpec::default()
        },
        GrammarSpec {
            num_types: 1,
            ..GrammarSpec::default()
        },
    ];
    for spec in bad {
        assert!(matches!(generate_corpus(&spec), Err(PipelineError::Spec(_))), "{spec:?}");
    }
    let deep_enough = GrammarSpec {
        max_depth: 3,
        min_len: 5,
        max_len: 5,
        ..GrammarSpec::default()
    };
    assert!(generate_corpus(&deep_enough).is_ok());
}

#[test]
fn zero_learning_rate_leaves_parameters_alone() {
    let corpus = small_corpus(0);
    let config = Config {
        learning_rate: 0.0,
        weight_decay: 0.0,
        ..tiny_config(3)
    };
    let out = train(&config, &corpus).unwrap();
    let fresh = Trained::init(config.clone(), out.trained.vocab.clone()).unwrap();
    assert_eq!(out.trained.store, fresh.store);
    let n = corpus.len();
    assert_eq!(out.loss_trace.len(), 3 * n);
    let mut per_epoch: Vec<Vec<u64>> = out.loss_trace.chunks(n).map(|c| c.iter().map(|v| v.to_bits()).collect()).collect();
    per_epoch.iter_mut().for_each(|e| e.sort());
    assert!(per_epoch.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn training_lowers_the_loss_and_is_reproducible() {
    let corpus = small_corpus(1);
    let config = Config {
        learning_rate: 1e-2,
        ..tiny_config(8)
    };
    let a = train(&config, &corpus).unwrap();
    let b = train(&config, &corpus).unwrap();
    assert_eq!(a.loss_trace, b.loss_trace);
    let first = a.epochs.first().unwrap().mean_loss;
    let last = a.epochs.last().unwrap().mean_loss;
    assert!(last < first, "{first} -> {last}");
    let c = train(&Config { seed: 9, ..config }, &corpus).unwrap();
    assert_ne!(a.loss_trace, c.loss_trace);
}

#[test]
fn early_stopping_ends_at_the_target() {
    let corpus = small_corpus(2);
    let config = Config {
        learning_rate: 1e-2,
        stop_at_train_f1: Some(0.0),
        eval_every: 2,
        ..tiny_config(10)
    };
    let out = train(&config, &corpus).unwrap();
    assert_eq!(out.epochs_run(), 2);
    assert!(out.epochs[1].train_f1.is_some() && out.epochs[0].train_f1.is_none());
}

#[test]
fn training_rejects_bad_data() {
    assert!(matches!(train(&tiny_config(1), &[]), Err(PipelineError::Data { .. })));
    let mut corpus = small_corpus(3);
    corpus[1].entities.insert(starner_core::entities::EntitySpan::new(0, 0, 7));
    assert!(matches!(train(&tiny_config(1), &corpus), Err(PipelineError::Data { index: 1, .. })));
}

#[test]
fn checkpoints_round_trip_and_reject_mismatches() {
    let corpus = small_corpus(4);
    let out = train(&tiny_config(1), &corpus).unwrap();
    let ckpt = Checkpoint::from_trained(&out.trained);
    let text = ckpt.to_json();
    let back = Checkpoint::from_json(&text).unwrap();
    assert_eq!(back.to_json(), text);
    let restored = back.restore().unwrap();
    assert_eq!(restored.store, out.trained.store);
    assert_eq!(restored.predict_all(&corpus).unwrap(), out.trained.predict_all(&corpus).unwrap());

    let dir = std::env::temp_dir().join(format!("starner-ckpt-{}.json", std::process::id()));
    ckpt.save(&dir).unwrap();
    assert_eq!(std::fs::read_to_string(&dir).unwrap(), text);
    assert_eq!(Checkpoint::load(&dir).unwrap(), ckpt);
    std::fs::remove_file(&dir).unwrap();

    let mut wrong = ckpt.clone();
    wrong.version = 99;
    assert!(matches!(wrong.restore(), Err(PipelineError::Checkpoint(_))));
    let mut wrong = ckpt.clone();
    wrong.params[0].shape = vec![1, 1];
    assert!(matches!(wrong.restore(), Err(PipelineError::Checkpoint(_))));
    let mut wrong = ckpt.clone();
    wrong.params.pop();
    assert!(matches!(wrong.restore(), Err(PipelineError::Checkpoint(_))));
    let mut wrong = ckpt;
    wrong.params[0].data = "@@".into();
    assert!(matches!(wrong.restore(), Err(PipelineError::Checkpoint(_))));
    assert!(Checkpoint::from_json("{").is_err());
}

#[test]
fn unseen_tokens_and_pos_tags_still_predict() {
    let corpus = small_corpus(5);
    let out = train(&tiny_config(1), &corpus).unwrap();
    let text = "{\"tokens\":[\"never\",\"seen\",\"ü\"],\"pos\":[\"X\",\"Y\",\"Z\"]}\n";
    let ex = to_examples(parse_records(text.as_bytes(), "mem").unwrap(), &out.trained.config.type_names).unwrap();
    let pred = out.trained.predict(&ex[0].tokens, ex[0].pos.as_deref()).unwrap();
    assert!(pred.iter().all(|s| s.end < 3));
}
