//! Star-topology heterogeneous graph over text and type nodes.
//!
//! Text node `i` listens to the text nodes within `k` positions (itself
//! included) and to every type node. A type node listens to every text node
//! and to nothing else. One layer runs two synchronous steps: all text nodes
//! aggregate and update, then all type nodes aggregate over the updated text
//! nodes and update. Scores mix a concatenation term with a bilinear
//! query-key term, which keeps queries that share a neighbourhood from
//! ranking keys identically.

use std::fmt;

use rand::Rng;

use crate::encoder::{gated_cell, RecurrentCellParams};
use crate::numerics::{leaky_relu, Graph, NumericsError, ParamId, ParamStore, Tensor, Var, LEAKY_SLOPE};

/// The two node classes of the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Text = 0,
    Type = 1,
}

/// A neighbour of a text node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Neighbor {
    Text(usize),
    Type(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub n: usize,
    pub c: usize,
    pub window: usize,
    text_neighbors: Vec<Vec<Neighbor>>,
}

impl Topology {
    /// Text neighbours of text node `i`, window first (ascending), then every
    /// type node.
    pub fn text_neighbors(&self, i: usize) -> &[Neighbor] {
        &self.text_neighbors[i]
    }

    /// Neighbours of a type node: all text nodes.
    pub fn type_neighbors(&self) -> std::ops::Range<usize> {
        0..self.n
    }

    /// Slots per text query in the padded layout: the full window plus types.
    pub fn text_slots(&self) -> usize {
        2 * self.window + 1 + self.c
    }
}

pub fn build_topology(n: usize, c: usize, window: usize) -> Result<Topology, NumericsError> {
    if n == 0 || c == 0 {
        return Err(NumericsError::Contract(format!(
            "a star graph needs at least one text and one type node (n={n}, c={c})"
        )));
    }
    let text_neighbors = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(window);
            let hi = (i + window).min(n - 1);
            (lo..=hi)
                .map(Neighbor::Text)
                .chain((0..c).map(Neighbor::Type))
                .collect()
        })
        .collect();
    Ok(Topology {
        n,
        c,
        window,
        text_neighbors,
    })
}

/// Score evaluations per layer and head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairCount {
    /// Text queries against windowed text keys.
    pub text_to_text: usize,
    /// Text queries against type keys.
    pub text_to_type: usize,
    /// Type queries against text keys.
    pub type_to_text: usize,
    pub total: usize,
    /// Closed form the total was checked against.
    pub formula: String,
}

impl fmt::Display for PairCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.total, self.formula)
    }
}

/// Window pairs in closed form: `n(2k+1) - k(k+1)` once `n > k`; a fully
/// covered sentence (`n <= k + 1`) has `n^2`.
pub fn window_pairs_closed_form(n: usize, k: usize) -> usize {
    if n <= k + 1 {
        n * n
    } else {
        n * (2 * k + 1) - k * (k + 1)
    }
}

pub fn count_attention_pairs(topology: &Topology) -> PairCount {
    let mut text_to_text = 0;
    let mut text_to_type = 0;
    for i in 0..topology.n {
        for nb in topology.text_neighbors(i) {
            match nb {
                Neighbor::Text(_) => text_to_text += 1,
                Neighbor::Type(_) => text_to_type += 1,
            }
        }
    }
    let type_to_text = topology.c * topology.type_neighbors().len();
    let (n, c, k) = (topology.n, topology.c, topology.window);
    let formula = if n <= k + 1 {
        format!("n^2 + 2cn = {} + {}", n * n, 2 * c * n)
    } else {
        format!("n(2k+1) - k(k+1) + 2cn = {} - {} + {}", n * (2 * k + 1), k * (k + 1), 2 * c * n)
    };
    debug_assert_eq!(text_to_text, window_pairs_closed_form(n, k));
    PairCount {
        text_to_text,
        text_to_type,
        type_to_text,
        total: text_to_text + text_to_type + type_to_text,
        formula,
    }
}

/// Affine map `h W + b` from one node space into another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Projection {
    pub w: ParamId,
    pub b: ParamId,
}

/// Parameters of one attention head in one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadParams {
    /// `proj[target][source]`, indexed by [`NodeKind`].
    pub proj: [[Projection; 2]; 2],
    /// Concatenation score vector `(2 * head_dim) x 1`: key half first.
    pub a: ParamId,
    /// Bilinear score matrix `head_dim x head_dim`.
    pub w_p: ParamId,
    pub head_dim: usize,
}

impl HeadParams {
    pub fn projection(&self, target: NodeKind, source: NodeKind) -> Projection {
        self.proj[target as usize][source as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerParams {
    pub heads: Vec<HeadParams>,
    /// Gate for text nodes.
    pub text_update: RecurrentCellParams,
    /// Gate for type nodes; never shared with the text gate.
    pub type_update: RecurrentCellParams,
}

/// Every layer of the graph encoder; layers share nothing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StarGraph {
    pub node_dim: usize,
    pub window: usize,
    pub layers: Vec<LayerParams>,
}

const KIND_NAMES: [&str; 2] = ["text", "type"];

impl StarGraph {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        node_dim: usize,
        heads: usize,
        depth: usize,
        window: usize,
        rng: &mut R,
    ) -> Result<Self, NumericsError> {
        if heads == 0 || !node_dim.is_multiple_of(heads) {
            return Err(NumericsError::Contract(format!(
                "node width {node_dim} is not divisible by {heads} heads"
            )));
        }
        let head_dim = node_dim / heads;
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let mut hs = Vec::with_capacity(heads);
            for m in 0..heads {
                let prefix = format!("graph.layer{l}.head{m}");
                let mut mk = |target: usize, source: usize| -> Result<Projection, NumericsError> {
                    let name = format!("{prefix}.proj.{}_from_{}", KIND_NAMES[target], KIND_NAMES[source]);
                    Ok(Projection {
                        w: store.add_weight(format!("{name}.w"), node_dim, head_dim, rng)?,
                        b: store.add_bias(format!("{name}.b"), head_dim)?,
                    })
                };
                let proj = [[mk(0, 0)?, mk(0, 1)?], [mk(1, 0)?, mk(1, 1)?]];
                let a = store.add_weight(format!("{prefix}.a"), 2 * head_dim, 1, rng)?;
                let w_p = store.add_weight(format!("{prefix}.w_p"), head_dim, head_dim, rng)?;
                hs.push(HeadParams {
                    proj,
                    a,
                    w_p,
                    head_dim,
                });
            }
            layers.push(LayerParams {
                heads: hs,
                text_update: RecurrentCellParams::new(store, &format!("graph.layer{l}.text_gate"), node_dim, node_dim, rng)?,
                type_update: RecurrentCellParams::new(store, &format!("graph.layer{l}.type_gate"), node_dim, node_dim, rng)?,
            });
        }
        Ok(Self {
            node_dim,
            window,
            layers,
        })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }
}

/// Switches used to probe the layer in isolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerOptions {
    /// Whether text nodes receive messages from type nodes.
    pub type_to_text: bool,
}

impl Default for LayerOptions {
    fn default() -> Self {
        Self { type_to_text: true }
    }
}

/// Text and type node matrices between layers.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphState {
    pub text: Tensor,
    pub types: Tensor,
    pub layer: usize,
}

fn split_a(g: &mut Graph<'_>, head: &HeadParams) -> Result<(Var, Var), NumericsError> {
    let a = g.param(head.a);
    let key_idx: Vec<usize> = (0..head.head_dim).collect();
    let query_idx: Vec<usize> = (head.head_dim..2 * head.head_dim).collect();
    Ok((g.gather_rows(a, &key_idx)?, g.gather_rows(a, &query_idx)?))
}

fn apply_projection(g: &mut Graph<'_>, x: Var, p: Projection) -> Result<Var, NumericsError> {
    let w = g.param(p.w);
    let b = g.param(p.b);
    g.affine(x, w, b)
}

/// Aggregated messages for every text node (`n x node_dim`), all heads
/// concatenated.
fn text_messages(
    g: &mut Graph<'_>,
    text: Var,
    types: Var,
    topology: &Topology,
    layer: &LayerParams,
    options: LayerOptions,
) -> Result<Var, NumericsError> {
    let n = topology.n;
    let slots = topology.text_slots();
    // Padded neighbour layout: slot s of query i maps to a row of
    // [text projections ; type projections].
    let mut key_rows = Vec::with_capacity(n * slots);
    let mut mask = Vec::with_capacity(n * slots);
    let mut query_rows = Vec::with_capacity(n * slots);
    let k = topology.window as isize;
    for i in 0..n {
        for d in -k..=k {
            let j = i as isize + d;
            let valid = j >= 0 && (j as usize) < n;
            key_rows.push(if valid { j as usize } else { 0 });
            mask.push(valid);
            query_rows.push(i);
        }
        for t in 0..topology.c {
            key_rows.push(n + t);
            mask.push(options.type_to_text);
            query_rows.push(i);
        }
    }

    let mut heads = Vec::with_capacity(layer.heads.len());
    for head in &layer.heads {
        let from_text = apply_projection(g, text, head.projection(NodeKind::Text, NodeKind::Text))?;
        let from_type = apply_projection(g, types, head.projection(NodeKind::Text, NodeKind::Type))?;
        let all_keys = g.concat_rows(&[from_text, from_type])?;
        let keys = g.gather_rows(all_keys, &key_rows)?;
        let queries = g.gather_rows(from_text, &query_rows)?;

        let (a_key, a_query) = split_a(g, head)?;
        let key_part = g.matmul(keys, a_key)?;
        let query_part = g.matmul(queries, a_query)?;
        let concat_score = g.add(key_part, query_part)?;

        let w_p = g.param(head.w_p);
        let w_p_t = g.transpose(w_p);
        let qw = g.matmul(from_text, w_p_t)?;
        let qw = g.gather_rows(qw, &query_rows)?;
        let kq = g.mul(keys, qw)?;
        let bilinear = g.row_sum(kq);

        let raw = g.add(concat_score, bilinear)?;
        let scores = g.leaky_relu(raw, LEAKY_SLOPE);
        let scores = g.reshape(scores, n, slots)?;
        let weights = g.masked_softmax(scores, &mask)?;
        let weights = g.reshape(weights, n * slots, 1)?;
        let weighted = g.mul(keys, weights)?;
        heads.push(g.segment_sum(weighted, slots)?);
    }
    g.concat_cols(&heads)
}

/// Aggregated messages for every type node (`c x node_dim`).
fn type_messages(g: &mut Graph<'_>, text: Var, types: Var, layer: &LayerParams) -> Result<Var, NumericsError> {
    let mut heads = Vec::with_capacity(layer.heads.len());
    for head in &layer.heads {
        let queries = apply_projection(g, types, head.projection(NodeKind::Type, NodeKind::Type))?;
        let keys = apply_projection(g, text, head.projection(NodeKind::Type, NodeKind::Text))?;
        let (a_key, a_query) = split_a(g, head)?;
        let key_part = g.matmul(keys, a_key)?;
        let key_part = g.transpose(key_part);
        let query_part = g.matmul(queries, a_query)?;
        let concat_score = g.add(query_part, key_part)?;

        let w_p = g.param(head.w_p);
        let w_p_t = g.transpose(w_p);
        let qw = g.matmul(queries, w_p_t)?;
        let keys_t = g.transpose(keys);
        let bilinear = g.matmul(qw, keys_t)?;

        let raw = g.add(concat_score, bilinear)?;
        let scores = g.leaky_relu(raw, LEAKY_SLOPE);
        let weights = g.softmax(scores)?;
        heads.push(g.matmul(weights, keys)?);
    }
    g.concat_cols(&heads)
}

/// One layer: text nodes aggregate and update from a consistent snapshot,
/// then type nodes aggregate over the updated text nodes and update.
pub fn layer_step(
    g: &mut Graph<'_>,
    text: Var,
    types: Var,
    topology: &Topology,
    layer: &LayerParams,
    options: LayerOptions,
) -> Result<(Var, Var), NumericsError> {
    let (n, d) = g.dims(text);
    let (c, d2) = g.dims(types);
    if n != topology.n || c != topology.c || d != d2 {
        return Err(NumericsError::Shape {
            op: "layer_step",
            left: vec![n, d],
            right: vec![c, d2],
        });
    }
    let text_msg = text_messages(g, text, types, topology, layer, options)?;
    let new_text = gated_cell(g, text_msg, text, &layer.text_update)?;
    let type_msg = type_messages(g, new_text, types, layer)?;
    let new_types = gated_cell(g, type_msg, types, &layer.type_update)?;
    Ok((new_text, new_types))
}

/// Folds [`layer_step`] over the first `depth` layers.
pub fn run_layers(
    g: &mut Graph<'_>,
    graph: &StarGraph,
    text: Var,
    types: Var,
    topology: &Topology,
    depth: usize,
    options: LayerOptions,
) -> Result<(Var, Var), NumericsError> {
    if depth == 0 || depth > graph.depth() {
        return Err(NumericsError::Contract(format!(
            "depth {depth} outside 1..={}",
            graph.depth()
        )));
    }
    let mut state = (text, types);
    for layer in &graph.layers[..depth] {
        state = layer_step(g, state.0, state.1, topology, layer, options)?;
    }
    Ok(state)
}

/// Runs the layers on plain tensors without recording a tape.
pub fn run_state(
    store: &ParamStore,
    graph: &StarGraph,
    state: &GraphState,
    topology: &Topology,
    depth: usize,
    options: LayerOptions,
) -> Result<GraphState, NumericsError> {
    let mut g = Graph::inference(store);
    let text = g.constant(state.text.clone());
    let types = g.constant(state.types.clone());
    let (t, y) = run_layers(&mut g, graph, text, types, topology, depth, options)?;
    Ok(GraphState {
        text: g.value(t).clone(),
        types: g.value(y).clone(),
        layer: state.layer + depth,
    })
}

// Per-query evaluation on plain vectors. These spell out one score or one
// aggregation at a time and back the batched layer in tests.

fn affine_row(store: &ParamStore, h: &[f64], p: Projection) -> Vec<f64> {
    let w = store.tensor(p.w);
    let b = store.tensor(p.b);
    (0..w.cols())
        .map(|j| b.data()[j] + h.iter().enumerate().map(|(i, x)| x * w.get(i, j)).sum::<f64>())
        .collect()
}

/// `h W + b` for the `(target, source)` map of one head.
pub fn project(store: &ParamStore, head: &HeadParams, h: &[f64], source: NodeKind, target: NodeKind) -> Vec<f64> {
    affine_row(store, h, head.projection(target, source))
}

/// Hybrid score of `key` for `query`, both already in the query's space:
/// `LeakyReLU(a . [key ; query] + key^T W_p query)`.
pub fn hybrid_score(store: &ParamStore, head: &HeadParams, key: &[f64], query: &[f64]) -> f64 {
    let a = store.tensor(head.a).data();
    let w_p = store.tensor(head.w_p);
    let d = head.head_dim;
    let concat: f64 = (0..d).map(|i| a[i] * key[i] + a[d + i] * query[i]).sum();
    let mut bilinear = 0.0;
    for i in 0..d {
        for j in 0..d {
            bilinear += key[i] * w_p.get(i, j) * query[j];
        }
    }
    leaky_relu(concat + bilinear, LEAKY_SLOPE)
}

/// Concatenation-only score `LeakyReLU(a . [query ; key])` of a plain graph
/// attention layer, with `query` and `key` under one shared projection.
pub fn baseline_gat_score(a: &[f64], query: &[f64], key: &[f64]) -> f64 {
    let d = query.len();
    // Query and key halves summed apart so the query adds one constant.
    let q: f64 = (0..d).map(|i| a[i] * query[i]).sum();
    let k: f64 = (0..d).map(|i| a[d + i] * key[i]).sum();
    leaky_relu(q + k, LEAKY_SLOPE)
}

/// Attention of one query over its neighbours, for one head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadAttention {
    pub weights: Vec<f64>,
    pub output: Vec<f64>,
}

/// Softmax-weighted sum of projected neighbours for a single query.
///
/// `keys` are the neighbours' raw states with their kinds; `query` is the
/// query's raw state and `query_kind` its class (which fixes the target
/// space of every projection).
pub fn attend(
    store: &ParamStore,
    head: &HeadParams,
    query: &[f64],
    query_kind: NodeKind,
    keys: &[(&[f64], NodeKind)],
) -> Result<HeadAttention, NumericsError> {
    if keys.is_empty() {
        return Err(NumericsError::Contract("attention over an empty neighbour set".into()));
    }
    let q = project(store, head, query, query_kind, query_kind);
    let projected: Vec<Vec<f64>> = keys
        .iter()
        .map(|(h, kind)| project(store, head, h, *kind, query_kind))
        .collect();
    let scores: Vec<f64> = projected.iter().map(|k| hybrid_score(store, head, k, &q)).collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let weights: Vec<f64> = exps.iter().map(|e| e / z).collect();
    let mut output = vec![0.0; head.head_dim];
    for (w, k) in weights.iter().zip(&projected) {
        for (o, v) in output.iter_mut().zip(k) {
            *o += w * v;
        }
    }
    Ok(HeadAttention { weights, output })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topology_examples() {
        let t = build_topology(5, 2, 1).unwrap();
        assert_eq!(
            t.text_neighbors(2),
            &[
                Neighbor::Text(1),
                Neighbor::Text(2),
                Neighbor::Text(3),
                Neighbor::Type(0),
                Neighbor::Type(1)
            ]
        );
        assert_eq!(
            t.text_neighbors(0),
            &[Neighbor::Text(0), Neighbor::Text(1), Neighbor::Type(0), Neighbor::Type(1)]
        );
        assert_eq!(t.type_neighbors(), 0..5);
        assert!(build_topology(0, 1, 1).is_err());
        assert!(build_topology(3, 0, 1).is_err());
    }

    #[test]
    fn pair_count_examples() {
        let pc = count_attention_pairs(&build_topology(5, 2, 1).unwrap());
        assert_eq!(pc.text_to_text + pc.text_to_type, 23);
        assert_eq!(pc.type_to_text, 10);
        assert_eq!(pc.total, 33);
        for n in 1..20 {
            let pc = count_attention_pairs(&build_topology(n, 1, 0).unwrap());
            assert_eq!(pc.total, 3 * n);
        }
    }

    #[test]
    fn closed_form_matches_enumeration() {
        for n in 1..40 {
            for k in 0..6 {
                let t = build_topology(n, 1, k).unwrap();
                let enumerated: usize = (0..n)
                    .map(|i| t.text_neighbors(i).iter().filter(|x| matches!(x, Neighbor::Text(_))).count())
                    .sum();
                assert_eq!(window_pairs_closed_form(n, k), enumerated, "n={n} k={k}");
            }
        }
    }
}
