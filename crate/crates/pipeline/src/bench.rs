//! Forward-pass timing of the star-graph encoder against sentence length.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use starner_core::encoder::Vocabulary;
use starner_core::stargraph::{build_topology, count_attention_pairs};

use crate::config::Config;
use crate::train::Trained;
use crate::PipelineError;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub pairs: usize,
    pub quadratic_pairs: usize,
    pub median_ms: f64,
}

pub const CSV_HEADER: &str = "n,pairs,quadratic_pairs,median_ms";

impl BenchRow {
    pub fn csv(&self) -> String {
        format!("{},{},{},{:.4}", self.n, self.pairs, self.quadratic_pairs, self.median_ms)
    }
}

/// Times `runs` (at least 5) full forward passes per length on random
/// sentences over a small vocabulary and reports the median.
pub fn bench(config: &Config, sizes: &[usize], runs: usize) -> Result<Vec<BenchRow>, PipelineError> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) || sizes.first() == Some(&0) {
        return Err(PipelineError::Config("sizes must be positive and strictly ascending".into()));
    }
    let runs = runs.max(5);
    let words: Vec<String> = (0..50).map(|i| format!("w{i}")).collect();
    let vocab = Vocabulary::build([(words.as_slice(), None)]);
    let trained = Trained::init(config.clone(), vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let c = config.type_names.len();
    sizes
        .iter()
        .map(|&n| {
            let tokens: Vec<String> = (0..n).map(|_| words[rng.gen_range(0..words.len())].clone()).collect();
            let sent = trained.encode(&tokens, None);
            let mut times = Vec::with_capacity(runs);
            for _ in 0..runs {
                let start = Instant::now();
                std::hint::black_box(trained.model.predict(&trained.store, &sent)?);
                times.push(start.elapsed().as_secs_f64() * 1e3);
            }
            times.sort_by(f64::total_cmp);
            let pairs = count_attention_pairs(&build_topology(n, c, config.window)?);
            Ok(BenchRow {
                n,
                pairs: pairs.total,
                quadratic_pairs: n * n,
                median_ms: times[runs / 2],
            })
        })
        .collect()
}
