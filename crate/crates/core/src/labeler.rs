//! Per-type fusion, emission scores and a constrained linear-chain CRF.
//!
//! Each entity type conditions a scan over the text nodes on its type node,
//! scores the five BIOES tags per position and decodes one tag layer. The
//! transition matrix is shared by all types and carries two extra states,
//! `START` and `END`; illegal transitions are pinned to [`MASK_SCORE`].

use rand::Rng;

use crate::encoder::{birnn, BiRnnParams};
use crate::entities::{decode_nested, BioesTag, EntitySet, TagSequence, TypeId};
use crate::numerics::{logsumexp, Axis, Graph, NumericsError, ParamId, ParamStore, Tensor, Var};
use crate::Error;

pub const NUM_TAGS: usize = BioesTag::COUNT;
pub const START: usize = NUM_TAGS;
pub const END: usize = NUM_TAGS + 1;
pub const NUM_STATES: usize = NUM_TAGS + 2;

/// Score given to every illegal transition in place of minus infinity.
pub const MASK_SCORE: f64 = -1e4;

pub type ConstraintMask = [[bool; NUM_STATES]; NUM_STATES];

/// Human-readable name of a CRF state.
pub fn state_name(state: usize) -> String {
    match state {
        START => "start".into(),
        END => "end".into(),
        s => BioesTag::from_index(s).map(|t| t.to_string()).unwrap_or_else(|| format!("#{s}")),
    }
}

/// Legal transitions `mask[from][to]` of the nested BIOES automaton.
///
/// A transition is illegal when it reaches `I` or `E` with nothing open
/// (from `START` or `O`), or when it leaves `B` or `I` with the entity still
/// open (into `O` or `END`). Nothing enters `START` and nothing leaves `END`.
/// Every other pair is legal: nested layers need `E -> I`, `B -> S`,
/// `S -> E` and similar bigrams that a flat automaton would forbid.
pub fn build_constraint_mask() -> ConstraintMask {
    let mut mask = [[false; NUM_STATES]; NUM_STATES];
    let (b, i, o, e) = (BioesTag::B.index(), BioesTag::I.index(), BioesTag::O.index(), BioesTag::E.index());
    for from in 0..NUM_STATES {
        for to in 0..NUM_STATES {
            if from == END || to == START || (from == START && to == END) {
                continue;
            }
            let nothing_open = from == START || from == o;
            let still_open = from == b || from == i;
            let illegal = (nothing_open && (to == i || to == e)) || (still_open && (to == o || to == END));
            mask[from][to] = !illegal;
        }
    }
    mask
}

/// First illegal transition of `tags` under the mask, as `(position, from, to)`
/// where `position` is the index of the tag being entered (`len` for `END`).
pub fn first_illegal_transition(tags: &[BioesTag], mask: &ConstraintMask) -> Option<(usize, usize, usize)> {
    let states: Vec<usize> = std::iter::once(START)
        .chain(tags.iter().map(|t| t.index()))
        .chain(std::iter::once(END))
        .collect();
    states
        .windows(2)
        .enumerate()
        .find(|(_, w)| !mask[w[0]][w[1]])
        .map(|(pos, w)| (pos, w[0], w[1]))
}

pub fn is_legal(tags: &[BioesTag], mask: &ConstraintMask) -> bool {
    first_illegal_transition(tags, mask).is_none()
}

fn mask_tensors(mask: &ConstraintMask) -> (Tensor, Tensor) {
    let mut keep = Tensor::zeros(NUM_STATES, NUM_STATES);
    let mut fill = Tensor::zeros(NUM_STATES, NUM_STATES);
    for (i, row) in mask.iter().enumerate() {
        for (j, &legal) in row.iter().enumerate() {
            if legal {
                keep.set(i, j, 1.0);
            } else {
                fill.set(i, j, MASK_SCORE);
            }
        }
    }
    (keep, fill)
}

/// `A` with every illegal entry replaced by [`MASK_SCORE`].
pub fn apply_mask(a: &Tensor, mask: &ConstraintMask) -> Tensor {
    let mut out = a.clone();
    for (i, row) in mask.iter().enumerate() {
        for (j, &legal) in row.iter().enumerate() {
            if !legal {
                out.set(i, j, MASK_SCORE);
            }
        }
    }
    out
}

/// Masked transitions on the tape; illegal entries receive no gradient.
pub fn masked_transitions(g: &mut Graph<'_>, a: Var, mask: &ConstraintMask) -> Result<Var, NumericsError> {
    let (keep, fill) = mask_tensors(mask);
    let keep = g.constant(keep);
    let fill = g.constant(fill);
    let kept = g.mul(a, keep)?;
    g.add(kept, fill)
}

fn check_crf_shapes(p: &Tensor, a: &Tensor) -> Result<(), NumericsError> {
    if p.rows() == 0 || p.cols() != NUM_TAGS || a.dims() != (NUM_STATES, NUM_STATES) {
        return Err(NumericsError::shape("crf", p, a));
    }
    Ok(())
}

/// Score of one tag path, boundary transitions included.
pub fn path_score(p: &Tensor, a: &Tensor, tags: &[BioesTag]) -> Result<f64, NumericsError> {
    check_crf_shapes(p, a)?;
    if tags.len() != p.rows() {
        return Err(NumericsError::Contract(format!(
            "path of length {} for {} emission rows",
            tags.len(),
            p.rows()
        )));
    }
    let mut s = 0.0;
    let mut prev = START;
    for (i, t) in tags.iter().enumerate() {
        s += a.get(prev, t.index()) + p.get(i, t.index());
        prev = t.index();
    }
    Ok(s + a.get(prev, END))
}

/// Forward algorithm in log space over all `5^L` paths.
pub fn log_partition(p: &Tensor, a: &Tensor) -> Result<f64, NumericsError> {
    check_crf_shapes(p, a)?;
    let mut alpha: Vec<f64> = (0..NUM_TAGS).map(|j| a.get(START, j) + p.get(0, j)).collect();
    let mut terms = vec![0.0; NUM_TAGS];
    for i in 1..p.rows() {
        let next: Vec<f64> = (0..NUM_TAGS)
            .map(|j| {
                for (k, t) in terms.iter_mut().enumerate() {
                    *t = alpha[k] + a.get(k, j);
                }
                logsumexp(&terms) + p.get(i, j)
            })
            .collect();
        alpha = next;
    }
    for (k, t) in terms.iter_mut().enumerate() {
        *t = alpha[k] + a.get(k, END);
    }
    Ok(logsumexp(&terms))
}

/// Best path and its score. At every backtracking step ties go to the lowest
/// tag index.
pub fn viterbi(p: &Tensor, a: &Tensor) -> Result<(Vec<BioesTag>, f64), NumericsError> {
    check_crf_shapes(p, a)?;
    let len = p.rows();
    let mut delta: Vec<f64> = (0..NUM_TAGS).map(|j| a.get(START, j) + p.get(0, j)).collect();
    let mut back = vec![[0usize; NUM_TAGS]; len];
    for i in 1..len {
        let mut next = [0.0; NUM_TAGS];
        for j in 0..NUM_TAGS {
            let mut best = 0;
            let mut best_score = delta[0] + a.get(0, j);
            for k in 1..NUM_TAGS {
                let s = delta[k] + a.get(k, j);
                if s > best_score {
                    best = k;
                    best_score = s;
                }
            }
            back[i][j] = best;
            next[j] = best_score + p.get(i, j);
        }
        delta = next.to_vec();
    }
    let mut last = 0;
    let mut best_score = delta[0] + a.get(0, END);
    for k in 1..NUM_TAGS {
        let s = delta[k] + a.get(k, END);
        if s > best_score {
            last = k;
            best_score = s;
        }
    }
    let mut path = vec![last; len];
    for i in (1..len).rev() {
        path[i - 1] = back[i][path[i]];
    }
    let tags = path.into_iter().map(|k| BioesTag::from_index(k).expect("tag index")).collect();
    Ok((tags, best_score))
}

/// `log_partition - path_score`, refusing gold paths the mask forbids.
pub fn nll(p: &Tensor, a: &Tensor, gold: &[BioesTag], mask: &ConstraintMask) -> Result<f64, Error> {
    check_gold(gold, mask)?;
    Ok(log_partition(p, a)? - path_score(p, a, gold)?)
}

fn check_gold(gold: &[BioesTag], mask: &ConstraintMask) -> Result<(), Error> {
    match first_illegal_transition(gold, mask) {
        Some((position, from, to)) => Err(Error::IllegalTransition {
            position,
            from: state_name(from),
            to: state_name(to),
        }),
        None => Ok(()),
    }
}

/// [`path_score`] on the tape. `a` must already be masked.
pub fn path_score_var(g: &mut Graph<'_>, p: Var, a: Var, tags: &[BioesTag]) -> Result<Var, NumericsError> {
    let len = g.dims(p).0;
    if tags.len() != len {
        return Err(NumericsError::Contract(format!("path of length {} for {len} emission rows", tags.len())));
    }
    let mut pick = Tensor::zeros(len, NUM_TAGS);
    let mut counts = Tensor::zeros(NUM_STATES, NUM_STATES);
    let mut prev = START;
    for (i, t) in tags.iter().enumerate() {
        pick.set(i, t.index(), 1.0);
        counts.set(prev, t.index(), counts.get(prev, t.index()) + 1.0);
        prev = t.index();
    }
    counts.set(prev, END, counts.get(prev, END) + 1.0);
    let pick = g.constant(pick);
    let counts = g.constant(counts);
    let emitted = g.mul(p, pick)?;
    let emitted = g.sum(emitted);
    let moved = g.mul(a, counts)?;
    let moved = g.sum(moved);
    g.add(emitted, moved)
}

/// [`log_partition`] on the tape. `a` must already be masked.
pub fn log_partition_var(g: &mut Graph<'_>, p: Var, a: Var) -> Result<Var, NumericsError> {
    let len = g.dims(p).0;
    let tag_rows: Vec<usize> = (0..NUM_TAGS).collect();
    let from_tags = g.gather_rows(a, &tag_rows)?;
    let between = g.slice_cols(from_tags, 0, NUM_TAGS)?;
    let to_end = g.slice_cols(from_tags, END, 1)?;
    let start_row = g.row(a, START)?;
    let from_start = g.slice_cols(start_row, 0, NUM_TAGS)?;

    let first = g.row(p, 0)?;
    let mut alpha = g.add(from_start, first)?;
    for i in 1..len {
        let col = g.transpose(alpha);
        let scores = g.add(col, between)?;
        let reduced = g.logsumexp(scores, Axis::Rows);
        let emit = g.row(p, i)?;
        alpha = g.add(reduced, emit)?;
    }
    let col = g.transpose(alpha);
    let closing = g.add(col, to_end)?;
    let total = g.logsumexp(closing, Axis::Rows);
    Ok(g.sum(total))
}

/// Negative log-likelihood of `gold` on the tape. `a` must already be masked.
pub fn nll_var(g: &mut Graph<'_>, p: Var, a: Var, gold: &[BioesTag], mask: &ConstraintMask) -> Result<Var, Error> {
    check_gold(gold, mask)?;
    let z = log_partition_var(g, p, a)?;
    let s = path_score_var(g, p, a, gold)?;
    Ok(g.sub(z, s)?)
}

/// Parameters that turn the text nodes into one type's emission scores.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionParams {
    pub rnn: BiRnnParams,
    /// Projects the type node to the scan's hidden width.
    pub init_w: ParamId,
    pub init_b: ParamId,
    pub maxout: [(ParamId, ParamId); 2],
    pub emit_w: ParamId,
    pub emit_b: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeler {
    pub node_dim: usize,
    pub types: Vec<FusionParams>,
    pub transitions: ParamId,
    pub mask: ConstraintMask,
}

impl Labeler {
    pub fn new<R: Rng>(store: &mut ParamStore, node_dim: usize, num_types: usize, rng: &mut R) -> Result<Self, NumericsError> {
        if !node_dim.is_multiple_of(2) {
            return Err(NumericsError::Contract(format!("node width {node_dim} must be even")));
        }
        let hidden = node_dim / 2;
        let mut types = Vec::with_capacity(num_types);
        for t in 0..num_types {
            let prefix = format!("labeler.type{t}");
            let rnn = BiRnnParams::new(store, &format!("{prefix}.rnn"), node_dim, hidden, rng)?;
            let init_w = store.add_weight(format!("{prefix}.init.w"), node_dim, hidden, rng)?;
            let init_b = store.add_bias(format!("{prefix}.init.b"), hidden)?;
            let mut piece = |k: usize| -> Result<(ParamId, ParamId), NumericsError> {
                Ok((
                    store.add_weight(format!("{prefix}.maxout{k}.w"), 2 * node_dim, node_dim, rng)?,
                    store.add_bias(format!("{prefix}.maxout{k}.b"), node_dim)?,
                ))
            };
            let maxout = [piece(0)?, piece(1)?];
            let emit_w = store.add_weight(format!("{prefix}.emit.w"), node_dim, NUM_TAGS, rng)?;
            let emit_b = store.add_bias(format!("{prefix}.emit.b"), NUM_TAGS)?;
            types.push(FusionParams {
                rnn,
                init_w,
                init_b,
                maxout,
                emit_w,
                emit_b,
            });
        }
        let transitions = store.add("labeler.transitions", Tensor::zeros(NUM_STATES, NUM_STATES))?;
        Ok(Self {
            node_dim,
            types,
            transitions,
            mask: build_constraint_mask(),
        })
    }

    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    /// Type-conditioned text representation (`L x node_dim`): a scan over the
    /// text nodes started from the projected type node, then a two-piece
    /// maxout over `[scan + text ; type]`.
    pub fn fuse(&self, g: &mut Graph<'_>, text: Var, type_node: Var, t: TypeId) -> Result<Var, NumericsError> {
        let p = self.params(t)?;
        let (len, _) = g.dims(text);
        let (init_w, init_b) = (g.param(p.init_w), g.param(p.init_b));
        let init = g.affine(type_node, init_w, init_b)?;
        let scanned = birnn(g, text, &p.rnn, Some(init))?;
        let residual = g.add(scanned, text)?;
        let repeated = g.gather_rows(type_node, &vec![0; len])?;
        let u = g.concat_cols(&[residual, repeated])?;
        let mut pieces = Vec::with_capacity(2);
        for &(w, b) in &p.maxout {
            let (w, b) = (g.param(w), g.param(b));
            pieces.push(g.affine(u, w, b)?);
        }
        g.max2(pieces[0], pieces[1])
    }

    /// Emission scores `L x 5` for type `t` from its fused representation.
    pub fn emissions(&self, g: &mut Graph<'_>, fused: Var, t: TypeId) -> Result<Var, NumericsError> {
        let p = self.params(t)?;
        let (w, b) = (g.param(p.emit_w), g.param(p.emit_b));
        g.affine(fused, w, b)
    }

    /// Emissions for every type; `types` holds one type node per row.
    pub fn all_emissions(&self, g: &mut Graph<'_>, text: Var, types: Var) -> Result<Vec<Var>, NumericsError> {
        let c = g.dims(types).0;
        if c != self.num_types() {
            return Err(NumericsError::Contract(format!(
                "{c} type nodes for {} labeled types",
                self.num_types()
            )));
        }
        (0..c)
            .map(|t| {
                let node = g.row(types, t)?;
                let fused = self.fuse(g, text, node, t)?;
                self.emissions(g, fused, t)
            })
            .collect()
    }

    /// Summed per-type negative log-likelihood of the gold tag layers.
    pub fn loss(&self, g: &mut Graph<'_>, text: Var, types: Var, gold: &[TagSequence]) -> Result<Var, Error> {
        let emissions = self.all_emissions(g, text, types)?;
        if gold.len() != emissions.len() {
            return Err(NumericsError::Contract(format!(
                "{} gold layers for {} types",
                gold.len(),
                emissions.len()
            ))
            .into());
        }
        let a = g.param(self.transitions);
        let a = masked_transitions(g, a, &self.mask)?;
        let mut total: Option<Var> = None;
        for (p, layer) in emissions.into_iter().zip(gold) {
            let l = nll_var(g, p, a, &layer.tags, &self.mask)?;
            total = Some(match total {
                Some(acc) => g.add(acc, l)?,
                None => l,
            });
        }
        total.ok_or_else(|| NumericsError::Contract("no entity types".into()).into())
    }

    /// Masked transition matrix as a plain tensor.
    pub fn masked_transition_matrix(&self, store: &ParamStore) -> Tensor {
        apply_mask(store.tensor(self.transitions), &self.mask)
    }

    /// Decodes every type layer and takes the union of the entity sets.
    pub fn predict(&self, store: &ParamStore, text: &Tensor, types: &Tensor) -> Result<TypedPrediction, Error> {
        let mut g = Graph::inference(store);
        let t = g.constant(text.clone());
        let y = g.constant(types.clone());
        let emissions = self.all_emissions(&mut g, t, y)?;
        let emissions: Vec<Tensor> = emissions.into_iter().map(|p| g.value(p).clone()).collect();
        predict_from_emissions(&emissions, &self.masked_transition_matrix(store))
    }

    fn params(&self, t: TypeId) -> Result<&FusionParams, NumericsError> {
        self.types
            .get(t)
            .ok_or_else(|| NumericsError::Contract(format!("unknown type {t}")))
    }
}

/// One type's decoded layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeLayer {
    pub tags: TagSequence,
    pub score: f64,
    pub entities: EntitySet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypedPrediction {
    pub layers: Vec<TypeLayer>,
    /// Union over types; equal spans under different labels stay distinct.
    pub entities: EntitySet,
}

/// Viterbi and nested decoding per type, given emission matrices indexed by
/// type and a masked transition matrix.
pub fn predict_from_emissions(emissions: &[Tensor], a: &Tensor) -> Result<TypedPrediction, Error> {
    let mut layers = Vec::with_capacity(emissions.len());
    let mut entities = EntitySet::new();
    for (type_id, p) in emissions.iter().enumerate() {
        let (tags, score) = viterbi(p, a)?;
        let tags = TagSequence::new(tags, type_id);
        let decoded = decode_nested(&tags).map_err(|source| Error::TypeDecode { type_id, source })?;
        entities.extend(decoded.iter().copied());
        layers.push(TypeLayer {
            tags,
            score,
            entities: decoded,
        });
    }
    Ok(TypedPrediction { layers, entities })
}
