//! Import of pretrained word vectors in the common text format: one word per
//! line followed by its whitespace-separated components.

use std::io::BufRead;
use std::path::Path;

use starner_core::encoder::Vocabulary;
use starner_core::numerics::{ParamId, ParamStore};

use crate::PipelineError;

/// Copies the vector of every vocabulary word found in `path` into the word
/// table; other rows keep their initialization. Returns the number of rows
/// overwritten.
pub fn import_word_vectors(
    path: &Path,
    vocab: &Vocabulary,
    store: &mut ParamStore,
    table: ParamId,
) -> Result<usize, PipelineError> {
    let file = std::fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let width = store.tensor(table).cols();
    let mut seen = vec![false; vocab.num_tokens()];
    let mut count = 0;
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PipelineError::io(path, e))?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let parse_err = |message: String| PipelineError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        let values = fields
            .map(|f| f.parse::<f64>().map_err(|e| parse_err(format!("{f:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if values.len() != width {
            return Err(parse_err(format!("expected {width} components, got {}", values.len())));
        }
        let id = vocab.token_id(word);
        if id <= starner_core::encoder::UNK || seen[id] {
            continue;
        }
        seen[id] = true;
        count += 1;
        let t = store.tensor_mut(table);
        t.data_mut()[id * width..(id + 1) * width].copy_from_slice(&values);
    }
    Ok(count)
}
