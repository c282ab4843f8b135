use super::{classify_pair, BioesTag, EntityError, EntitySet, EntitySpan, NestingRelation, TagSequence, TypeId};

/// Writes one BIOES layer for a laminar family of same-type spans.
///
/// Three passes, later passes overwriting earlier ones: `I` over every
/// span interior, then `B`/`E` on the boundaries of multi-token spans, then
/// `S` on single-token spans. The result does not depend on the order in
/// which spans are visited.
pub fn encode_nested(spans: &EntitySet, len: usize, type_id: TypeId) -> Result<TagSequence, EntityError> {
    if len == 0 {
        return Err(EntityError::EmptySentence);
    }
    for s in spans {
        s.validate(len)?;
        if s.label != type_id {
            return Err(EntityError::MixedTypes {
                start: s.start,
                end: s.end,
                found: s.label,
                expected: type_id,
            });
        }
    }
    if let Some((a, b)) = find_overlap(spans) {
        return Err(EntityError::Representability(a.start, a.end, b.start, b.end));
    }

    let mut tags = vec![BioesTag::O; len];
    for s in spans {
        for t in &mut tags[s.start + 1..s.end.max(s.start + 1)] {
            *t = BioesTag::I;
        }
    }
    for s in spans.iter().filter(|s| !s.is_single()) {
        tags[s.start] = BioesTag::B;
        tags[s.end] = BioesTag::E;
    }
    for s in spans.iter().filter(|s| s.is_single()) {
        tags[s.start] = BioesTag::S;
    }
    Ok(TagSequence::new(tags, type_id))
}

fn find_overlap(spans: &EntitySet) -> Option<(EntitySpan, EntitySpan)> {
    let list: Vec<&EntitySpan> = spans.iter().collect();
    for (i, a) in list.iter().enumerate() {
        for b in &list[i + 1..] {
            if matches!(classify_pair(a, b), Ok(NestingRelation::OverlapSameType)) {
                return Some((**a, **b));
            }
        }
    }
    None
}

/// Recovers the entity set of one BIOES layer, innermost entities first.
///
/// Start indices (`B`, `S`) and end indices (`E`, `S`) are paired inside
/// out: every end closes the innermost open start. A start whose entity has
/// already been closed is reopened when a later `I` or `E` of the same
/// non-`O` run still needs an enclosing start, which is how a shared start
/// (`B E I E`) yields two entities. Starts still open when the run ends are
/// closed on the run's last boundary, the `E` hidden under a final `S`.
/// An `S` inside an open entity is a totally nested single.
///
/// Sequences accepted by the CRF constraint mask always decode; anything
/// else that cannot be paired yields [`EntityError::Decode`].
pub fn decode_nested(seq: &TagSequence) -> Result<EntitySet, EntityError> {
    let label = seq.type_id;
    let tags = &seq.tags;
    let mut out = EntitySet::new();

    // Open starts, innermost last.
    let mut open: Vec<usize> = Vec::new();
    // Starts of the outermost entities already closed in the current run.
    let mut closed_roots: Vec<usize> = Vec::new();

    let close = |open: &mut Vec<usize>, roots: &mut Vec<usize>, out: &mut EntitySet, end: usize| {
        let start = open.pop().expect("caller checked");
        out.insert(EntitySpan::new(start, end, label));
        if open.is_empty() {
            roots.retain(|&r| r < start);
            roots.push(start);
        }
    };

    for (i, &tag) in tags.iter().enumerate() {
        match tag {
            BioesTag::O => {
                finish_run(tags, i, &mut open, &mut out, label)?;
                closed_roots.clear();
            }
            BioesTag::B => open.push(i),
            BioesTag::S => {
                out.insert(EntitySpan::new(i, i, label));
                if open.is_empty() {
                    closed_roots.retain(|&r| r < i);
                    closed_roots.push(i);
                }
            }
            BioesTag::I => {
                if open.is_empty() {
                    let start = closed_roots.pop().ok_or(EntityError::Decode {
                        index: i,
                        reason: "inside tag with no enclosing start",
                    })?;
                    open.push(start);
                }
            }
            BioesTag::E => {
                if open.is_empty() {
                    let start = closed_roots.pop().ok_or(EntityError::Decode {
                        index: i,
                        reason: "end tag with no matching start",
                    })?;
                    open.push(start);
                }
                close(&mut open, &mut closed_roots, &mut out, i);
            }
        }
    }
    finish_run(tags, tags.len(), &mut open, &mut out, label)?;
    Ok(out)
}

/// Closes whatever is still open at the end of the run ending before `next`.
fn finish_run(
    tags: &[BioesTag],
    next: usize,
    open: &mut Vec<usize>,
    out: &mut EntitySet,
    label: TypeId,
) -> Result<(), EntityError> {
    if open.is_empty() {
        return Ok(());
    }
    let last = next - 1;
    if !tags[last].closes() {
        let start = open[0];
        return Err(EntityError::Decode {
            index: start,
            reason: "start tag never closed",
        });
    }
    while let Some(start) = open.pop() {
        out.insert(EntitySpan::new(start, last, label));
    }
    Ok(())
}

/// Whether the layer codec reproduces `spans` exactly.
///
/// False for same-type partial overlaps and for nestings whose BIOES image
/// is shared with a simpler set.
pub fn is_representable(spans: &EntitySet, len: usize) -> bool {
    let Some(first) = spans.iter().next() else {
        return len > 0;
    };
    match encode_nested(spans, len, first.label) {
        Ok(tags) => decode_nested(&tags).map(|d| &d == spans).unwrap_or(false),
        Err(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use BioesTag::*;

    fn set(spans: &[(usize, usize)]) -> EntitySet {
        spans.iter().map(|&(s, e)| EntitySpan::new(s, e, 0)).collect()
    }

    fn enc(spans: &[(usize, usize)], len: usize) -> Vec<BioesTag> {
        encode_nested(&set(spans), len, 0).unwrap().tags
    }

    fn dec(tags: &[BioesTag]) -> EntitySet {
        decode_nested(&TagSequence::new(tags.to_vec(), 0)).unwrap()
    }

    #[test]
    fn encode_examples() {
        assert_eq!(enc(&[], 3), vec![O, O, O]);
        assert_eq!(enc(&[(1, 1)], 3), vec![O, S, O]);
        assert_eq!(enc(&[(0, 2), (1, 1)], 3), vec![B, S, E]);
        assert_eq!(enc(&[(0, 3), (0, 1)], 4), vec![B, E, I, E]);
    }

    #[test]
    fn decode_examples() {
        assert!(dec(&[O, O, O]).is_empty());
        assert_eq!(dec(&[B, S, E]), set(&[(0, 2), (1, 1)]));
        assert_eq!(dec(&[B, E, I, E]), set(&[(0, 1), (0, 3)]));
        assert_eq!(dec(&[B, I, E]), set(&[(0, 2)]));
    }

    #[test]
    fn flat_neighbours_do_not_merge() {
        assert_eq!(dec(&[B, E, B, E]), set(&[(0, 1), (2, 3)]));
        assert_eq!(dec(&[S, S, S]), set(&[(0, 0), (1, 1), (2, 2)]));
        assert_eq!(dec(&[S, O, B, E]), set(&[(0, 0), (2, 3)]));
    }

    #[test]
    fn shared_boundaries() {
        assert_eq!(dec(&[B, B, E, E]), set(&[(0, 3), (1, 2)]));
        assert_eq!(dec(&[B, B, I, E]), set(&[(0, 3), (1, 3)]));
        assert_eq!(dec(&[S, E]), set(&[(0, 0), (0, 1)]));
        assert_eq!(dec(&[B, S]), set(&[(0, 1), (1, 1)]));
        assert_eq!(dec(&[S, I, E]), set(&[(0, 0), (0, 2)]));
        assert_eq!(dec(&[B, B, E, B, E, E]), set(&[(0, 5), (1, 2), (3, 4)]));
    }

    #[test]
    fn decode_errors_name_the_index() {
        let err = decode_nested(&TagSequence::new(vec![O, I, E], 0)).unwrap_err();
        assert_eq!(
            err,
            EntityError::Decode {
                index: 1,
                reason: "inside tag with no enclosing start"
            }
        );
        let err = decode_nested(&TagSequence::new(vec![O, B, I], 0)).unwrap_err();
        assert!(matches!(err, EntityError::Decode { index: 1, .. }));
        let err = decode_nested(&TagSequence::new(vec![E], 0)).unwrap_err();
        assert!(matches!(err, EntityError::Decode { index: 0, .. }));
    }

    #[test]
    fn encode_rejects_overlap_and_bad_input() {
        let err = encode_nested(&set(&[(0, 3), (2, 5)]), 6, 0).unwrap_err();
        assert_eq!(err, EntityError::Representability(0, 3, 2, 5));
        assert!(matches!(
            encode_nested(&set(&[(0, 3)]), 3, 0),
            Err(EntityError::InvalidSpan { .. })
        ));
        assert_eq!(encode_nested(&set(&[]), 0, 0), Err(EntityError::EmptySentence));
        let mixed: EntitySet = [EntitySpan::new(0, 0, 1)].into();
        assert!(matches!(encode_nested(&mixed, 2, 0), Err(EntityError::MixedTypes { .. })));
    }

    #[test]
    fn representability_examples() {
        assert!(is_representable(&set(&[(0, 2), (1, 1)]), 3));
        assert!(!is_representable(&set(&[(0, 3), (2, 5)]), 6));
        assert!(is_representable(&set(&[]), 3));
        assert!(!is_representable(&set(&[(0, 1), (2, 3), (0, 3)]), 4));
    }

    #[test]
    fn encoding_is_order_independent() {
        let spans = [(0usize, 7usize), (1, 3), (2, 2), (5, 6), (5, 5)];
        let reference = enc(&spans, 9);
        // Apply the passes by hand in every rotation of the enumeration order.
        for rot in 0..spans.len() {
            let mut order = spans.to_vec();
            order.rotate_left(rot);
            order.reverse();
            let mut tags = vec![O; 9];
            for &(s, e) in &order {
                for t in tags.iter_mut().take(e).skip(s + 1) {
                    *t = I;
                }
            }
            for &(s, e) in order.iter().filter(|(s, e)| s != e) {
                tags[s] = B;
                tags[e] = E;
            }
            for &(s, _) in order.iter().filter(|(s, e)| s == e) {
                tags[s] = S;
            }
            assert_eq!(tags, reference);
        }
    }
}
