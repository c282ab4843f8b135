//! Exact-match precision, recall and F1 over `(start, end, label)` triples.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use starner_core::entities::{classify_pair, EntitySet, EntitySpan, NestingRelation};

/// Match counts for one slice of the data.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub gold: usize,
    pub predicted: usize,
    /// Gold entities that were predicted.
    pub found: usize,
    /// Predictions that are in the gold set. Equals `found` except on
    /// relation rows, where gold and predictions are categorized separately.
    pub matched: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.matched, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.found, self.gold)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(&mut self, other: Counts) {
        self.gold += other.gold;
        self.predicted += other.predicted;
        self.found += other.found;
        self.matched += other.matched;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Nesting category of one entity relative to the others in its sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
/// Declared in increasing priority.
pub enum Relation {
    Flat,
    Odt,
    Ndt,
    Nst,
    Me,
}

impl Relation {
    pub const ALL: [Relation; 5] = [Relation::Flat, Relation::Odt, Relation::Ndt, Relation::Nst, Relation::Me];

    pub fn name(self) -> &'static str {
        match self {
            Relation::Flat => "flat",
            Relation::Nst => "NST",
            Relation::Ndt => "NDT",
            Relation::Odt => "ODT",
            Relation::Me => "ME",
        }
    }
}

/// Categorizes `span` by its relations to the other members of `set`. An
/// entity involved in several relations takes the rarest: ME, then NST,
/// then NDT, then ODT.
pub fn relation_of(span: &EntitySpan, set: &EntitySet) -> Relation {
    let mut best = Relation::Flat;
    for other in set.iter().filter(|o| *o != span) {
        let r = match classify_pair(span, other) {
            Ok(NestingRelation::MultiLabel) => Relation::Me,
            Ok(NestingRelation::NestedSameType) => Relation::Nst,
            Ok(NestingRelation::NestedDifferentType) => Relation::Ndt,
            Ok(NestingRelation::OverlapDifferentType) => Relation::Odt,
            _ => continue,
        };
        best = best.max(r);
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub micro: Counts,
    pub per_type: Vec<(String, Counts)>,
    /// Gold entities are categorized within the gold set and predictions
    /// within the predicted set.
    pub per_relation: BTreeMap<Relation, Counts>,
    pub sentences: usize,
}

impl EvalReport {
    pub fn precision(&self) -> f64 {
        self.micro.precision()
    }

    pub fn recall(&self) -> f64 {
        self.micro.recall()
    }

    pub fn f1(&self) -> f64 {
        self.micro.f1()
    }

    pub fn relation(&self, r: Relation) -> Counts {
        self.per_relation.get(&r).copied().unwrap_or_default()
    }
}

/// Scores `predicted[i]` against `gold[i]` sentence by sentence.
pub fn evaluate(gold: &[EntitySet], predicted: &[EntitySet], type_names: &[String]) -> EvalReport {
    assert_eq!(gold.len(), predicted.len(), "one prediction per gold sentence");
    let mut micro = Counts::default();
    let mut per_type = vec![Counts::default(); type_names.len()];
    let mut per_relation: BTreeMap<Relation, Counts> = Relation::ALL.iter().map(|r| (*r, Counts::default())).collect();
    for (g, p) in gold.iter().zip(predicted) {
        for span in g {
            let row = Counts {
                gold: 1,
                found: p.contains(span) as usize,
                ..Counts::default()
            };
            micro.add(row);
            if let Some(c) = per_type.get_mut(span.label) {
                c.add(row);
            }
            per_relation.entry(relation_of(span, g)).or_default().add(row);
        }
        for span in p {
            let row = Counts {
                predicted: 1,
                matched: g.contains(span) as usize,
                ..Counts::default()
            };
            micro.add(row);
            if let Some(c) = per_type.get_mut(span.label) {
                c.add(row);
            }
            per_relation.entry(relation_of(span, p)).or_default().add(row);
        }
    }
    EvalReport {
        micro,
        per_type: type_names.iter().cloned().zip(per_type).collect(),
        per_relation,
        sentences: gold.len(),
    }
}

impl EvalReport {
    /// Plain-text table: the micro row, then the requested breakdowns.
    pub fn table(&self, per_type: bool, per_relation: bool) -> String {
        let mut out = format!(
            "{:<10} {:>9} {:>9} {:>9} {:>6} {:>6} {:>6}\n",
            "", "precision", "recall", "f1", "gold", "pred", "hit"
        );
        out += &row("micro", &self.micro);
        if per_type {
            for (name, c) in &self.per_type {
                out += &row(name, c);
            }
        }
        if per_relation {
            for (r, c) in &self.per_relation {
                out += &row(r.name(), c);
            }
        }
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.table(true, true))
    }
}

fn row(name: &str, c: &Counts) -> String {
    format!(
        "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>6} {:>6} {:>6}\n",
        name,
        c.precision(),
        c.recall(),
        c.f1(),
        c.gold,
        c.predicted,
        c.found
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(spans: &[(usize, usize, usize)]) -> EntitySet {
        spans.iter().map(|&(s, e, t)| EntitySpan::new(s, e, t)).collect()
    }

    fn names() -> Vec<String> {
        vec!["A".into(), "B".into()]
    }

    #[test]
    fn perfect_half_and_empty_predictions() {
        let gold = vec![set(&[(0, 1, 0), (3, 3, 1)])];
        let r = evaluate(&gold, &gold, &names());
        assert_eq!((r.precision(), r.recall(), r.f1()), (1.0, 1.0, 1.0));

        let pred = vec![set(&[(0, 1, 0), (2, 2, 1)])];
        let r = evaluate(&gold, &pred, &names());
        assert_eq!((r.precision(), r.recall(), r.f1()), (0.5, 0.5, 0.5));

        let r = evaluate(&gold, &[EntitySet::new()], &names());
        assert_eq!((r.precision(), r.recall(), r.f1()), (0.0, 0.0, 0.0));
        let r = evaluate(&[EntitySet::new()], &[EntitySet::new()], &names());
        assert_eq!(r.f1(), 0.0);
    }

    #[test]
    fn per_type_counts_sum_to_micro() {
        let gold = vec![set(&[(0, 3, 0), (1, 2, 0), (1, 2, 1)]), set(&[(0, 0, 1)])];
        let pred = vec![set(&[(0, 3, 0), (1, 2, 1), (2, 2, 0)]), set(&[])];
        let r = evaluate(&gold, &pred, &names());
        let mut sum = Counts::default();
        r.per_type.iter().for_each(|(_, c)| sum.add(*c));
        assert_eq!(sum, r.micro);
        assert!(r.f1() <= r.precision().max(r.recall()));
    }

    #[test]
    fn relations_follow_priority() {
        let g = set(&[(0, 5, 0), (1, 2, 0), (1, 2, 1), (4, 4, 1), (7, 7, 0)]);
        assert_eq!(relation_of(&EntitySpan::new(1, 2, 0), &g), Relation::Me);
        assert_eq!(relation_of(&EntitySpan::new(0, 5, 0), &g), Relation::Nst);
        assert_eq!(relation_of(&EntitySpan::new(4, 4, 1), &g), Relation::Ndt);
        assert_eq!(relation_of(&EntitySpan::new(7, 7, 0), &g), Relation::Flat);
        let odt = set(&[(0, 2, 0), (1, 3, 1)]);
        assert_eq!(relation_of(&EntitySpan::new(0, 2, 0), &odt), Relation::Odt);

        let r = evaluate(&[g.clone()], &[g], &names());
        assert_eq!(r.relation(Relation::Me).gold, 2);
        assert_eq!(r.relation(Relation::Nst).recall(), 1.0);
    }
}
