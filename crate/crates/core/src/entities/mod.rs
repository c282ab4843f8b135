//! Entity spans, the pairwise nesting taxonomy and per-type BIOES layers.
//!
//! Spans use 0-based inclusive token indices. A sentence may carry several
//! entities over the same tokens as long as their labels differ (multi-label
//! entities); within one label the family must be laminar (no partial
//! overlap) to be expressible as a single BIOES layer.

mod codec;

pub use codec::{decode_nested, encode_nested, is_representable};

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Entity-type identifier; an index into the registered type names.
pub type TypeId = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EntityError {
    #[error("invalid span ({start}, {end}) for sentence length {len}")]
    InvalidSpan { start: usize, end: usize, len: usize },
    #[error("span ({start}, {end}) has label {found}, expected {expected}")]
    MixedTypes {
        start: usize,
        end: usize,
        found: TypeId,
        expected: TypeId,
    },
    #[error("spans ({0}, {1}) and ({2}, {3}) overlap partially with the same type")]
    Representability(usize, usize, usize, usize),
    #[error("sentence length must be at least 1")]
    EmptySentence,
    #[error("malformed tag sequence at index {index}: {reason}")]
    Decode { index: usize, reason: &'static str },
}

/// A labelled span `[start, end]` (inclusive on both ends).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub label: TypeId,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, label: TypeId) -> Self {
        Self { start, end, label }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_single(&self) -> bool {
        self.start == self.end
    }

    pub fn validate(&self, len: usize) -> Result<(), EntityError> {
        if self.start > self.end || self.end >= len {
            return Err(EntityError::InvalidSpan {
                start: self.start,
                end: self.end,
                len,
            });
        }
        Ok(())
    }

    /// Whether `self` covers every token of `other`.
    pub fn contains(&self, other: &EntitySpan) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn same_extent(&self, other: &EntitySpan) -> bool {
        self.start == other.start && self.end == other.end
    }
}

impl fmt::Display for EntitySpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.start, self.end, self.label)
    }
}

/// Duplicate-free set of spans, kept in `(start, end, label)` order.
pub type EntitySet = BTreeSet<EntitySpan>;

/// How two entities relate to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NestingRelation {
    /// Same span, same label: one entity.
    Identical,
    /// Same span, different labels.
    MultiLabel,
    /// Containment, same label.
    NestedSameType,
    /// Containment, different labels.
    NestedDifferentType,
    /// Partial overlap, same label. Not expressible in one BIOES layer.
    OverlapSameType,
    /// Partial overlap, different labels.
    OverlapDifferentType,
    /// No shared token and at least one token between them.
    Disjoint,
    /// Adjacent without overlap; behaves exactly like `Disjoint` downstream.
    Touching,
}

impl NestingRelation {
    pub fn short_name(self) -> &'static str {
        match self {
            NestingRelation::Identical => "identical",
            NestingRelation::MultiLabel => "ME",
            NestingRelation::NestedSameType => "NST",
            NestingRelation::NestedDifferentType => "NDT",
            NestingRelation::OverlapSameType => "OST",
            NestingRelation::OverlapDifferentType => "ODT",
            NestingRelation::Disjoint => "disjoint",
            NestingRelation::Touching => "touching",
        }
    }

    pub fn is_separate(self) -> bool {
        matches!(self, NestingRelation::Disjoint | NestingRelation::Touching)
    }
}

/// Classifies an (unordered) pair of spans. Symmetric in its arguments.
///
/// Callers are expected to have validated both spans; a span with
/// `start > end` is rejected.
pub fn classify_pair(a: &EntitySpan, b: &EntitySpan) -> Result<NestingRelation, EntityError> {
    for s in [a, b] {
        if s.start > s.end {
            return Err(EntityError::InvalidSpan {
                start: s.start,
                end: s.end,
                len: s.end + 1,
            });
        }
    }
    let same_label = a.label == b.label;
    let relation = if a.same_extent(b) {
        if same_label {
            NestingRelation::Identical
        } else {
            NestingRelation::MultiLabel
        }
    } else if a.contains(b) || b.contains(a) {
        if same_label {
            NestingRelation::NestedSameType
        } else {
            NestingRelation::NestedDifferentType
        }
    } else if a.start.max(b.start) <= a.end.min(b.end) {
        if same_label {
            NestingRelation::OverlapSameType
        } else {
            NestingRelation::OverlapDifferentType
        }
    } else if a.end + 1 == b.start || b.end + 1 == a.start {
        NestingRelation::Touching
    } else {
        NestingRelation::Disjoint
    };
    Ok(relation)
}

/// Closed BIOES tag set, in the index order used by the CRF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BioesTag {
    B,
    I,
    O,
    E,
    S,
}

impl BioesTag {
    pub const ALL: [BioesTag; 5] = [BioesTag::B, BioesTag::I, BioesTag::O, BioesTag::E, BioesTag::S];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn opens(self) -> bool {
        matches!(self, BioesTag::B | BioesTag::S)
    }

    pub fn closes(self) -> bool {
        matches!(self, BioesTag::E | BioesTag::S)
    }
}

impl fmt::Display for BioesTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            BioesTag::B => 'B',
            BioesTag::I => 'I',
            BioesTag::O => 'O',
            BioesTag::E => 'E',
            BioesTag::S => 'S',
        };
        write!(f, "{c}")
    }
}

/// One BIOES layer: the annotation of a single entity type over a sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSequence {
    pub tags: Vec<BioesTag>,
    pub type_id: TypeId,
}

impl TagSequence {
    pub fn new(tags: Vec<BioesTag>, type_id: TypeId) -> Self {
        Self { tags, type_id }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.tags.iter().map(|t| t.index()).collect()
    }
}

impl fmt::Display for TagSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tags.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

/// A dataset-lint finding: a pair of entities and why it is a problem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub first: EntitySpan,
    pub second: EntitySpan,
    pub relation: NestingRelation,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.relation {
            NestingRelation::OverlapSameType => {
                write!(f, "{} and {} overlap partially with the same type", self.first, self.second)
            }
            _ => write!(
                f,
                "{} and {} make a layer that one tag sequence cannot express",
                self.first, self.second
            ),
        }
    }
}

/// Reports every same-type partial overlap, plus every pair inside a
/// per-type subset that the BIOES layer cannot reproduce.
///
/// Invalid spans (out of range) are ignored here; they are rejected by the
/// loaders before linting.
pub fn validate_entity_set(spans: &EntitySet, len: usize) -> Vec<Diagnostic> {
    let list: Vec<&EntitySpan> = spans.iter().filter(|s| s.validate(len).is_ok()).collect();
    let mut out = Vec::new();
    for (i, a) in list.iter().enumerate() {
        for b in &list[i + 1..] {
            if let Ok(rel @ NestingRelation::OverlapSameType) = classify_pair(a, b) {
                out.push(Diagnostic {
                    first: **a,
                    second: **b,
                    relation: rel,
                });
            }
        }
    }
    if !out.is_empty() {
        return out;
    }
    for (_, subset) in split_by_type(spans) {
        if is_representable(&subset, len) {
            continue;
        }
        // Blame the nested pairs of the ambiguous layer.
        let members: Vec<&EntitySpan> = subset.iter().collect();
        for (i, a) in members.iter().enumerate() {
            for b in &members[i + 1..] {
                if let Ok(rel) = classify_pair(a, b) {
                    if rel == NestingRelation::NestedSameType {
                        out.push(Diagnostic {
                            first: **a,
                            second: **b,
                            relation: rel,
                        });
                    }
                }
            }
        }
        if out.is_empty() {
            // No nested pair to point at; report the layer against itself.
            if let Some(first) = subset.iter().next() {
                out.push(Diagnostic {
                    first: *first,
                    second: *first,
                    relation: NestingRelation::Identical,
                });
            }
        }
    }
    out
}

/// Partitions a set by label, in ascending label order.
pub fn split_by_type(spans: &EntitySet) -> Vec<(TypeId, EntitySet)> {
    let mut out: Vec<(TypeId, EntitySet)> = Vec::new();
    for s in spans {
        match out.iter_mut().find(|(t, _)| *t == s.label) {
            Some((_, set)) => {
                set.insert(*s);
            }
            None => out.push((s.label, EntitySet::from([*s]))),
        }
    }
    out.sort_by_key(|(t, _)| *t);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const PRO: TypeId = 0;
    const DNA: TypeId = 1;

    fn sp(s: usize, e: usize, t: TypeId) -> EntitySpan {
        EntitySpan::new(s, e, t)
    }

    #[test]
    fn classify_examples() {
        let rel = |a, b| classify_pair(&a, &b).unwrap();
        assert_eq!(rel(sp(0, 2, PRO), sp(0, 2, DNA)), NestingRelation::MultiLabel);
        assert_eq!(rel(sp(0, 4, PRO), sp(1, 2, PRO)), NestingRelation::NestedSameType);
        assert_eq!(rel(sp(0, 2, PRO), sp(0, 2, PRO)), NestingRelation::Identical);
        assert_eq!(rel(sp(0, 3, PRO), sp(2, 5, PRO)), NestingRelation::OverlapSameType);
        assert_eq!(rel(sp(0, 3, PRO), sp(2, 5, DNA)), NestingRelation::OverlapDifferentType);
        assert_eq!(rel(sp(0, 4, PRO), sp(0, 1, DNA)), NestingRelation::NestedDifferentType);
        assert_eq!(rel(sp(0, 1, PRO), sp(2, 3, PRO)), NestingRelation::Touching);
        assert_eq!(rel(sp(0, 1, PRO), sp(3, 3, PRO)), NestingRelation::Disjoint);
    }

    #[test]
    fn classify_rejects_inverted_span() {
        assert!(classify_pair(&sp(3, 1, PRO), &sp(0, 0, PRO)).is_err());
    }

    #[test]
    fn classify_exhaustive_symmetric_and_total() {
        // Every span pair over L <= 6 with two labels.
        for len in 1..=6usize {
            let mut spans = Vec::new();
            for s in 0..len {
                for e in s..len {
                    for t in 0..2 {
                        spans.push(sp(s, e, t));
                    }
                }
            }
            for a in &spans {
                for b in &spans {
                    let ab = classify_pair(a, b).unwrap();
                    let ba = classify_pair(b, a).unwrap();
                    assert_eq!(ab, ba, "{a} vs {b}");
                    // Independent membership test: exactly one predicate holds.
                    let inter = a.start.max(b.start) <= a.end.min(b.end);
                    let same = a.label == b.label;
                    let preds = [
                        a == b,
                        a.same_extent(b) && !same,
                        !a.same_extent(b) && (a.contains(b) || b.contains(a)) && same,
                        !a.same_extent(b) && (a.contains(b) || b.contains(a)) && !same,
                        inter && !a.contains(b) && !b.contains(a) && same,
                        inter && !a.contains(b) && !b.contains(a) && !same,
                        !inter && a.end.abs_diff(b.start).min(b.end.abs_diff(a.start)) > 1,
                        !inter && (a.end + 1 == b.start || b.end + 1 == a.start),
                    ];
                    assert_eq!(preds.iter().filter(|p| **p).count(), 1, "{a} vs {b}");
                    let idx = preds.iter().position(|p| *p).unwrap();
                    let expected = [
                        NestingRelation::Identical,
                        NestingRelation::MultiLabel,
                        NestingRelation::NestedSameType,
                        NestingRelation::NestedDifferentType,
                        NestingRelation::OverlapSameType,
                        NestingRelation::OverlapDifferentType,
                        NestingRelation::Disjoint,
                        NestingRelation::Touching,
                    ][idx];
                    assert_eq!(ab, expected, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn validate_examples() {
        let me = EntitySet::from([sp(0, 2, PRO), sp(0, 2, DNA)]);
        assert!(validate_entity_set(&me, 5).is_empty());

        let ost = EntitySet::from([sp(0, 3, PRO), sp(2, 5, PRO)]);
        let diags = validate_entity_set(&ost, 6);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].first, sp(0, 3, PRO));
        assert_eq!(diags[0].second, sp(2, 5, PRO));
        assert_eq!(diags[0].relation, NestingRelation::OverlapSameType);

        assert!(validate_entity_set(&EntitySet::new(), 3).is_empty());
    }

    #[test]
    fn validate_flags_ambiguous_layer() {
        // {(0,1),(2,3),(0,3)} encodes to the same tags as the flat pair.
        let set = EntitySet::from([sp(0, 1, PRO), sp(2, 3, PRO), sp(0, 3, PRO)]);
        let diags = validate_entity_set(&set, 4);
        assert!(!diags.is_empty());
        assert!(diags.iter().all(|d| d.relation == NestingRelation::NestedSameType));
    }

    #[test]
    fn split_by_type_partitions() {
        let set = EntitySet::from([sp(0, 2, PRO), sp(0, 2, DNA), sp(1, 1, PRO)]);
        let parts = split_by_type(&set);
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].0, PRO);
        assert_eq!(parts[0].1.len(), 2);
        assert_eq!(parts[1].1.len(), 1);
    }

    #[test]
    fn tag_index_order() {
        for (i, t) in BioesTag::ALL.iter().enumerate() {
            assert_eq!(t.index(), i);
            assert_eq!(BioesTag::from_index(i), Some(*t));
        }
        assert_eq!(BioesTag::from_index(5), None);
    }
}
