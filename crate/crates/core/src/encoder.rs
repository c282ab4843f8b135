//! Hybrid multi-granularity token embedding and initial node states.
//!
//! Each token is represented by four pieces: a character-level summary
//! (bidirectional gated scan over its characters, mean-pooled), a trainable
//! token table standing in for a contextual language-model vector, a word
//! table and a part-of-speech table. The concatenation is fused by a second
//! bidirectional scan into the context matrix `H^A`, from which text nodes
//! (shared affine map) and type nodes (per-type affine map + max-pool) are
//! initialised.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{Graph, NumericsError, ParamId, ParamStore, Tensor, Var};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
/// Part-of-speech id used when a dataset carries no tags.
pub const POS_NULL: usize = 2;

/// Token, character and part-of-speech symbol tables.
///
/// Ids are dense; `0` is padding and `1` the unknown symbol in each table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    chars: Vec<char>,
    pos: Vec<String>,
    #[serde(skip)]
    token_index: HashMap<String, usize>,
    #[serde(skip)]
    char_index: HashMap<char, usize>,
    #[serde(skip)]
    pos_index: HashMap<String, usize>,
}

// The lookup maps are derived from the tables.
impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.chars == other.chars && self.pos == other.pos
    }
}

/// A sentence mapped to vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSentence {
    pub token_ids: Vec<usize>,
    pub char_ids: Vec<Vec<usize>>,
    pub pos_ids: Vec<usize>,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        let mut v = Vocabulary {
            tokens: vec!["<pad>".into(), "<unk>".into()],
            chars: vec!['\u{0}', '\u{fffd}'],
            pos: vec!["<pad>".into(), "<unk>".into(), "<none>".into()],
            token_index: HashMap::new(),
            char_index: HashMap::new(),
            pos_index: HashMap::new(),
        };
        v.reindex();
        v
    }
}

impl Vocabulary {
    /// Collects every token, character and tag from `sentences`, in order of
    /// first appearance.
    pub fn build<'a, I>(sentences: I) -> Self
    where
        I: IntoIterator<Item = (&'a [String], Option<&'a [String]>)>,
    {
        let mut v = Vocabulary::default();
        for (tokens, pos) in sentences {
            for tok in tokens {
                if !v.token_index.contains_key(tok) {
                    v.token_index.insert(tok.clone(), v.tokens.len());
                    v.tokens.push(tok.clone());
                }
                for ch in tok.chars() {
                    if !v.char_index.contains_key(&ch) {
                        v.char_index.insert(ch, v.chars.len());
                        v.chars.push(ch);
                    }
                }
            }
            for tag in pos.into_iter().flatten() {
                if !v.pos_index.contains_key(tag) {
                    v.pos_index.insert(tag.clone(), v.pos.len());
                    v.pos.push(tag.clone());
                }
            }
        }
        v
    }

    /// Rebuilds the lookup maps after deserialization.
    pub fn reindex(&mut self) {
        self.token_index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        self.char_index = self.chars.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        self.pos_index = self.pos.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len()
    }

    pub fn num_pos(&self) -> usize {
        self.pos.len()
    }

    pub fn token_id(&self, tok: &str) -> usize {
        self.token_index.get(tok).copied().unwrap_or(UNK)
    }

    pub fn encode(&self, tokens: &[String], pos: Option<&[String]>) -> EncodedSentence {
        let token_ids = tokens.iter().map(|t| self.token_id(t)).collect();
        let char_ids = tokens
            .iter()
            .map(|t| {
                let ids: Vec<usize> = t.chars().map(|c| self.char_index.get(&c).copied().unwrap_or(UNK)).collect();
                if ids.is_empty() {
                    vec![UNK]
                } else {
                    ids
                }
            })
            .collect();
        let pos_ids = match pos {
            Some(tags) => tags.iter().map(|t| self.pos_index.get(t).copied().unwrap_or(UNK)).collect(),
            None => vec![POS_NULL; tokens.len()],
        };
        EncodedSentence {
            token_ids,
            char_ids,
            pos_ids,
        }
    }
}

/// Weights of one gated recurrent cell.
///
/// `r = sigmoid(x W_xr + b_xr + h W_hr + b_hr)`, `z` likewise,
/// `n = tanh(x W_xn + b_xn + r * (h W_hn + b_hn))`, `o = (1 - z) * n + z * h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecurrentCellParams {
    pub input: usize,
    pub hidden: usize,
    pub w_xr: ParamId,
    pub w_hr: ParamId,
    pub w_xz: ParamId,
    pub w_hz: ParamId,
    pub w_xn: ParamId,
    pub w_hn: ParamId,
    pub b_xr: ParamId,
    pub b_hr: ParamId,
    pub b_xz: ParamId,
    pub b_hz: ParamId,
    pub b_xn: ParamId,
    pub b_hn: ParamId,
}

impl RecurrentCellParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, NumericsError> {
        Ok(Self {
            input,
            hidden,
            w_xr: store.add_weight(format!("{prefix}.w_xr"), input, hidden, rng)?,
            w_hr: store.add_weight(format!("{prefix}.w_hr"), hidden, hidden, rng)?,
            w_xz: store.add_weight(format!("{prefix}.w_xz"), input, hidden, rng)?,
            w_hz: store.add_weight(format!("{prefix}.w_hz"), hidden, hidden, rng)?,
            w_xn: store.add_weight(format!("{prefix}.w_xn"), input, hidden, rng)?,
            w_hn: store.add_weight(format!("{prefix}.w_hn"), hidden, hidden, rng)?,
            b_xr: store.add_bias(format!("{prefix}.b_xr"), hidden)?,
            b_hr: store.add_bias(format!("{prefix}.b_hr"), hidden)?,
            b_xz: store.add_bias(format!("{prefix}.b_xz"), hidden)?,
            b_hz: store.add_bias(format!("{prefix}.b_hz"), hidden)?,
            b_xn: store.add_bias(format!("{prefix}.b_xn"), hidden)?,
            b_hn: store.add_bias(format!("{prefix}.b_hn"), hidden)?,
        })
    }

    pub fn ids(&self) -> [ParamId; 12] {
        [
            self.w_xr, self.w_hr, self.w_xz, self.w_hz, self.w_xn, self.w_hn, self.b_xr, self.b_hr, self.b_xz,
            self.b_hz, self.b_xn, self.b_hn,
        ]
    }
}

/// Input-side projections of a whole sequence, computed once per scan.
struct InputGates {
    r: Var,
    z: Var,
    n: Var,
}

fn input_gates(g: &mut Graph<'_>, x: Var, p: &RecurrentCellParams) -> Result<InputGates, NumericsError> {
    let (w_xr, b_xr) = (g.param(p.w_xr), g.param(p.b_xr));
    let (w_xz, b_xz) = (g.param(p.w_xz), g.param(p.b_xz));
    let (w_xn, b_xn) = (g.param(p.w_xn), g.param(p.b_xn));
    Ok(InputGates {
        r: g.affine(x, w_xr, b_xr)?,
        z: g.affine(x, w_xz, b_xz)?,
        n: g.affine(x, w_xn, b_xn)?,
    })
}

fn cell_from_gates(
    g: &mut Graph<'_>,
    xr: Var,
    xz: Var,
    xn: Var,
    h: Var,
    p: &RecurrentCellParams,
) -> Result<Var, NumericsError> {
    let (w_hr, b_hr) = (g.param(p.w_hr), g.param(p.b_hr));
    let (w_hz, b_hz) = (g.param(p.w_hz), g.param(p.b_hz));
    let (w_hn, b_hn) = (g.param(p.w_hn), g.param(p.b_hn));
    let hr = g.affine(h, w_hr, b_hr)?;
    let r_pre = g.add(xr, hr)?;
    let r = g.sigmoid(r_pre);
    let hz = g.affine(h, w_hz, b_hz)?;
    let z_pre = g.add(xz, hz)?;
    let z = g.sigmoid(z_pre);
    let hn = g.affine(h, w_hn, b_hn)?;
    let gated = g.mul(r, hn)?;
    let n_pre = g.add(xn, gated)?;
    let n = g.tanh(n_pre);
    let keep = g.one_minus(z);
    let fresh = g.mul(keep, n)?;
    let carried = g.mul(z, h)?;
    g.add(fresh, carried)
}

/// One gated update. `x` and `h` may hold several rows (a batch); each row
/// is updated independently.
pub fn gated_cell(g: &mut Graph<'_>, x: Var, h: Var, p: &RecurrentCellParams) -> Result<Var, NumericsError> {
    let (xr, xc) = g.dims(x);
    let (hr, hc) = g.dims(h);
    if xc != p.input || hc != p.hidden || xr != hr {
        return Err(NumericsError::Shape {
            op: "gated_cell",
            left: vec![xr, xc],
            right: vec![hr, hc],
        });
    }
    let gates = input_gates(g, x, p)?;
    cell_from_gates(g, gates.r, gates.z, gates.n, h, p)
}

/// Forward and backward cell of a bidirectional scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BiRnnParams {
    pub fwd: RecurrentCellParams,
    pub bwd: RecurrentCellParams,
}

impl BiRnnParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, NumericsError> {
        Ok(Self {
            fwd: RecurrentCellParams::new(store, &format!("{prefix}.fwd"), input, hidden, rng)?,
            bwd: RecurrentCellParams::new(store, &format!("{prefix}.bwd"), input, hidden, rng)?,
        })
    }

    pub fn output_width(&self) -> usize {
        self.fwd.hidden + self.bwd.hidden
    }
}

fn scan(
    g: &mut Graph<'_>,
    xs: Var,
    p: &RecurrentCellParams,
    init: Var,
    order: impl Iterator<Item = usize>,
) -> Result<Vec<Var>, NumericsError> {
    let len = g.dims(xs).0;
    let gates = input_gates(g, xs, p)?;
    let mut out = vec![init; len];
    let mut h = init;
    for i in order {
        let xr = g.row(gates.r, i)?;
        let xz = g.row(gates.z, i)?;
        let xn = g.row(gates.n, i)?;
        h = cell_from_gates(g, xr, xz, xn, h, p)?;
        out[i] = h;
    }
    Ok(out)
}

/// Bidirectional scan over the rows of `xs` (`L x input`); row `i` of the
/// result is `[fwd_i ; bwd_i]`. Both directions start from `init` (one row
/// of the shared hidden width) or from zeros.
pub fn birnn(g: &mut Graph<'_>, xs: Var, p: &BiRnnParams, init: Option<Var>) -> Result<Var, NumericsError> {
    let (len, width) = g.dims(xs);
    if len == 0 {
        return Err(NumericsError::Contract("bidirectional scan over an empty sequence".into()));
    }
    if width != p.fwd.input || width != p.bwd.input {
        return Err(NumericsError::Shape {
            op: "birnn",
            left: vec![len, width],
            right: vec![p.fwd.input, p.fwd.hidden],
        });
    }
    let (init_f, init_b) = match init {
        Some(h) => (h, h),
        None => (
            g.constant(Tensor::zeros(1, p.fwd.hidden)),
            g.constant(Tensor::zeros(1, p.bwd.hidden)),
        ),
    };
    let fwd = scan(g, xs, &p.fwd, init_f, 0..len)?;
    let bwd = scan(g, xs, &p.bwd, init_b, (0..len).rev())?;
    let f = g.concat_rows(&fwd)?;
    let b = g.concat_rows(&bwd)?;
    g.concat_cols(&[f, b])
}

/// Character summary of every token: a bidirectional scan over each token's
/// characters followed by a mean over its positions. Tokens are processed as
/// one batch; positions past a token's length are masked out of both the
/// recurrence and the mean.
pub fn char_summaries(
    g: &mut Graph<'_>,
    char_table: ParamId,
    char_ids: &[Vec<usize>],
    p: &BiRnnParams,
) -> Result<Var, NumericsError> {
    let batch = char_ids.len();
    let steps = char_ids.iter().map(Vec::len).max().unwrap_or(0);
    if batch == 0 || steps == 0 {
        return Err(NumericsError::Contract("character scan over an empty batch".into()));
    }
    let table = g.param(char_table);
    let mut inputs = Vec::with_capacity(steps);
    let mut masks = Vec::with_capacity(steps);
    for t in 0..steps {
        let ids: Vec<usize> = char_ids.iter().map(|c| c.get(t).copied().unwrap_or(PAD)).collect();
        inputs.push(g.gather_rows(table, &ids)?);
        let m: Vec<f64> = char_ids.iter().map(|c| if t < c.len() { 1.0 } else { 0.0 }).collect();
        masks.push(Tensor::column(&m));
    }

    let mut run = |cell: &RecurrentCellParams, order: Vec<usize>| -> Result<Var, NumericsError> {
        let mut h = g.constant(Tensor::zeros(batch, cell.hidden));
        let mut acc: Option<Var> = None;
        for t in order {
            let m = g.constant(masks[t].clone());
            let next = gated_cell(g, inputs[t], h, cell)?;
            // h <- h + m * (next - h): unchanged on padded slots.
            let delta = g.sub(next, h)?;
            let step = g.mul(delta, m)?;
            h = g.add(h, step)?;
            let kept = g.mul(h, m)?;
            acc = Some(match acc {
                Some(a) => g.add(a, kept)?,
                None => kept,
            });
        }
        Ok(acc.expect("at least one step"))
    };
    let fwd_sum = run(&p.fwd, (0..steps).collect())?;
    let bwd_sum = run(&p.bwd, (0..steps).rev().collect())?;
    let total = g.concat_cols(&[fwd_sum, bwd_sum])?;
    let inv: Vec<f64> = char_ids.iter().map(|c| 1.0 / c.len() as f64).collect();
    let inv = g.constant(Tensor::column(&inv));
    g.mul(total, inv)
}

/// Widths of the four embedding pieces and of the fused context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingDims {
    pub char_dim: usize,
    pub token_dim: usize,
    pub word_dim: usize,
    pub pos_dim: usize,
    pub context_dim: usize,
    pub node_dim: usize,
}

impl EmbeddingDims {
    pub fn concat_width(&self) -> usize {
        self.token_dim + self.char_dim + self.word_dim + self.pos_dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingTables {
    pub chars: ParamId,
    pub tokens: ParamId,
    pub words: ParamId,
    pub pos: ParamId,
}

/// All parameters from raw ids up to the initial graph nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoder {
    pub dims: EmbeddingDims,
    pub tables: EmbeddingTables,
    pub char_rnn: BiRnnParams,
    pub fusion_rnn: BiRnnParams,
    pub text_w: ParamId,
    pub text_b: ParamId,
    pub type_w: Vec<ParamId>,
    pub type_b: Vec<ParamId>,
}

fn embedding_table<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let limit = (3.0 / cols as f64).sqrt();
    let mut data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect();
    // Padding row stays zero.
    data[..cols].iter_mut().for_each(|v| *v = 0.0);
    Tensor::matrix(rows, cols, data).expect("sized")
}

impl Encoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        vocab: &Vocabulary,
        dims: EmbeddingDims,
        num_types: usize,
        rng: &mut R,
    ) -> Result<Self, NumericsError> {
        if !dims.char_dim.is_multiple_of(2) || !dims.context_dim.is_multiple_of(2) {
            return Err(NumericsError::Contract(
                "character and context widths must be even (two scan directions)".into(),
            ));
        }
        let tables = EmbeddingTables {
            chars: store.add("encoder.char_table", embedding_table(vocab.num_chars(), dims.char_dim, rng))?,
            tokens: store.add("encoder.token_table", embedding_table(vocab.num_tokens(), dims.token_dim, rng))?,
            words: store.add("encoder.word_table", embedding_table(vocab.num_tokens(), dims.word_dim, rng))?,
            pos: store.add("encoder.pos_table", embedding_table(vocab.num_pos(), dims.pos_dim, rng))?,
        };
        let char_rnn = BiRnnParams::new(store, "encoder.char_rnn", dims.char_dim, dims.char_dim / 2, rng)?;
        let fusion_rnn = BiRnnParams::new(store, "encoder.fusion_rnn", dims.concat_width(), dims.context_dim / 2, rng)?;
        let text_w = store.add_weight("encoder.text_node.w", dims.context_dim, dims.node_dim, rng)?;
        let text_b = store.add_bias("encoder.text_node.b", dims.node_dim)?;
        let mut type_w = Vec::with_capacity(num_types);
        let mut type_b = Vec::with_capacity(num_types);
        for t in 0..num_types {
            type_w.push(store.add_weight(format!("encoder.type_node.{t}.w"), dims.context_dim, dims.node_dim, rng)?);
            type_b.push(store.add_bias(format!("encoder.type_node.{t}.b"), dims.node_dim)?);
        }
        Ok(Self {
            dims,
            tables,
            char_rnn,
            fusion_rnn,
            text_w,
            text_b,
            type_w,
            type_b,
        })
    }

    pub fn num_types(&self) -> usize {
        self.type_w.len()
    }

    /// The four embedding pieces, concatenated in the order
    /// `[token ; char ; word ; pos]` (`L x concat_width`).
    pub fn token_features(&self, g: &mut Graph<'_>, sent: &EncodedSentence) -> Result<Var, NumericsError> {
        if sent.is_empty() {
            return Err(NumericsError::Contract("empty sentence".into()));
        }
        let chars = char_summaries(g, self.tables.chars, &sent.char_ids, &self.char_rnn)?;
        let tok_table = g.param(self.tables.tokens);
        let tokens = g.gather_rows(tok_table, &sent.token_ids)?;
        let word_table = g.param(self.tables.words);
        let words = g.gather_rows(word_table, &sent.token_ids)?;
        let pos_table = g.param(self.tables.pos);
        let pos = g.gather_rows(pos_table, &sent.pos_ids)?;
        g.concat_cols(&[tokens, chars, words, pos])
    }

    /// Context matrix `H^A` (`L x context_dim`).
    pub fn hybrid_embed(&self, g: &mut Graph<'_>, sent: &EncodedSentence) -> Result<Var, NumericsError> {
        let features = self.token_features(g, sent)?;
        birnn(g, features, &self.fusion_rnn, None)
    }

    /// Text nodes `H^e = H^A W_e + b_e` (`L x node_dim`).
    pub fn init_text_nodes(&self, g: &mut Graph<'_>, context: Var) -> Result<Var, NumericsError> {
        let w = g.param(self.text_w);
        let b = g.param(self.text_b);
        g.affine(context, w, b)
    }

    /// Type nodes, one row per type: max over positions of `H^A W_t + b_t`.
    pub fn init_type_nodes(&self, g: &mut Graph<'_>, context: Var) -> Result<Var, NumericsError> {
        let mut rows = Vec::with_capacity(self.type_w.len());
        for (&w, &b) in self.type_w.iter().zip(&self.type_b) {
            let (w, b) = (g.param(w), g.param(b));
            let projected = g.affine(context, w, b)?;
            rows.push(g.max_pool_rows(projected));
        }
        g.concat_rows(&rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_reserves_pad_and_unknown() {
        let toks = ["ab".to_string(), "c".to_string()];
        let v = Vocabulary::build([(&toks[..], None)]);
        assert_eq!(v.token_id("ab"), 2);
        assert_eq!(v.token_id("zz"), UNK);
        let enc = v.encode(&["c".into(), "zz".into()], None);
        assert_eq!(enc.token_ids, vec![3, UNK]);
        assert_eq!(enc.char_ids, vec![vec![4], vec![UNK, UNK]]);
        assert_eq!(enc.pos_ids, vec![POS_NULL, POS_NULL]);
    }
}
