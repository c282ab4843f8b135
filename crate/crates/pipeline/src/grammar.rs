//! Seeded synthetic corpora with planted flat, nested and multi-label
//! entities.
//!
//! Every entity is marked by dedicated trigger tokens: a multi-token entity
//! of type `t` opens with a `b{t}*` token and closes with an `e{t}*` token, a
//! single-token entity is one `s{t}*` token, and a span carrying two labels
//! `a < b` uses `m{a}.{b}*` (single) or `mb{a}.{b}*` ... `me{a}.{b}*`. Nested
//! entities sit strictly inside their parent's markers, so a type layer never
//! contains partial overlaps.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use starner_core::entities::{validate_entity_set, EntitySet, EntitySpan, TypeId};

use crate::dataset::Example;
use crate::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrammarSpec {
    pub sentences: usize,
    /// Distinct filler words.
    pub vocab_size: usize,
    pub num_types: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Chance that the next top-level segment is an entity rather than filler.
    pub entity_rate: f64,
    /// Chances of a nested same-type, nested different-type and multi-label
    /// entity; the remainder is flat.
    pub p_nst: f64,
    pub p_ndt: f64,
    pub p_me: f64,
    /// Deepest nesting level; 1 means no nesting.
    pub max_depth: usize,
    /// Trigger tokens per type and role.
    pub markers: usize,
    pub seed: u64,
}

impl Default for GrammarSpec {
    fn default() -> Self {
        Self {
            sentences: 32,
            vocab_size: 200,
            num_types: 3,
            min_len: 5,
            max_len: 20,
            entity_rate: 0.4,
            p_nst: 0.2,
            p_ndt: 0.2,
            p_me: 0.15,
            max_depth: 3,
            markers: 3,
            seed: 0,
        }
    }
}

impl GrammarSpec {
    pub fn load(path: &std::path::Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Spec(format!("{}: {e}", path.display())))
    }

    pub fn type_names(&self) -> Vec<String> {
        (0..self.num_types).map(|t| format!("T{t}")).collect()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Spec(m));
        for (name, p) in [
            ("entity_rate", self.entity_rate),
            ("p_nst", self.p_nst),
            ("p_ndt", self.p_ndt),
            ("p_me", self.p_me),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if self.p_nst + self.p_ndt + self.p_me > 1.0 + 1e-12 {
            return bad("p_nst + p_ndt + p_me exceeds 1".into());
        }
        if self.num_types == 0 || self.vocab_size == 0 || self.markers == 0 {
            return bad("num_types, vocab_size and markers must be at least 1".into());
        }
        if self.num_types < 2 && (self.p_ndt > 0.0 || self.p_me > 0.0) {
            return bad("different-type nesting and multi-label spans need at least 2 types".into());
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad(format!("length range [{}, {}] is empty", self.min_len, self.max_len));
        }
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1".into());
        }
        // A chain of `d` nested entities needs 2d - 1 tokens.
        if 2 * self.max_depth - 1 > self.max_len {
            return bad(format!(
                "nesting depth {} cannot fit in sentences of at most {} tokens",
                self.max_depth, self.max_len
            ));
        }
        Ok(())
    }
}

struct Fragment {
    tokens: Vec<String>,
    spans: Vec<EntitySpan>,
}

impl Fragment {
    fn append(&mut self, other: Fragment) {
        let offset = self.tokens.len();
        self.tokens.extend(other.tokens);
        self.spans.extend(
            other
                .spans
                .into_iter()
                .map(|s| EntitySpan::new(s.start + offset, s.end + offset, s.label)),
        );
    }

    fn word(w: String) -> Fragment {
        Fragment {
            tokens: vec![w],
            spans: Vec::new(),
        }
    }
}

#[derive(Clone, Copy)]
enum Kind {
    Flat,
    NestedSame,
    NestedOther,
    MultiLabel,
}

struct Generator<'a> {
    spec: &'a GrammarSpec,
    rng: ChaCha8Rng,
}

const MARKER_LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

impl Generator<'_> {
    fn marker(&mut self, role: &str, tag: &str) -> String {
        let j = self.rng.gen_range(0..self.spec.markers);
        let letter = MARKER_LETTERS[j % MARKER_LETTERS.len()] as char;
        let round = j / MARKER_LETTERS.len();
        if round == 0 {
            format!("{role}{tag}{letter}")
        } else {
            format!("{role}{tag}{letter}{round}")
        }
    }

    fn filler(&mut self) -> String {
        format!("w{}", self.rng.gen_range(0..self.spec.vocab_size))
    }

    fn other_type(&mut self, t: TypeId) -> TypeId {
        let u = self.rng.gen_range(0..self.spec.num_types - 1);
        if u >= t {
            u + 1
        } else {
            u
        }
    }

    fn pick_kind(&mut self, depth: usize, budget: usize) -> Kind {
        let s = self.spec;
        let r: f64 = self.rng.gen();
        let can_nest = depth < s.max_depth && budget >= 3;
        if r < s.p_me {
            Kind::MultiLabel
        } else if r < s.p_me + s.p_nst && can_nest {
            Kind::NestedSame
        } else if r < s.p_me + s.p_nst + s.p_ndt && can_nest {
            Kind::NestedOther
        } else {
            Kind::Flat
        }
    }

    /// An entity of type `t` at nesting level `depth` in at most `budget`
    /// tokens (`budget >= 1`).
    fn entity(&mut self, t: TypeId, depth: usize, budget: usize) -> Fragment {
        match self.pick_kind(depth, budget) {
            Kind::Flat => {
                if budget < 2 || self.rng.gen_bool(0.4) {
                    let tok = self.marker("s", &t.to_string());
                    return Fragment {
                        tokens: vec![tok],
                        spans: vec![EntitySpan::new(0, 0, t)],
                    };
                }
                let inner = self.rng.gen_range(0..=2.min(budget - 2));
                let tag = t.to_string();
                let mut tokens = vec![self.marker("b", &tag)];
                for _ in 0..inner {
                    tokens.push(self.filler());
                }
                tokens.push(self.marker("e", &tag));
                let end = tokens.len() - 1;
                Fragment {
                    tokens,
                    spans: vec![EntitySpan::new(0, end, t)],
                }
            }
            Kind::MultiLabel => {
                let u = self.other_type(t);
                let (a, b) = (t.min(u), t.max(u));
                let tag = format!("{a}.{b}");
                let mut tokens = Vec::new();
                if budget < 2 || self.rng.gen_bool(0.5) {
                    tokens.push(self.marker("m", &tag));
                } else {
                    let inner = self.rng.gen_range(0..=2.min(budget - 2));
                    tokens.push(self.marker("mb", &tag));
                    for _ in 0..inner {
                        tokens.push(self.filler());
                    }
                    tokens.push(self.marker("me", &tag));
                }
                let end = tokens.len() - 1;
                Fragment {
                    tokens,
                    spans: vec![EntitySpan::new(0, end, a), EntitySpan::new(0, end, b)],
                }
            }
            kind @ (Kind::NestedSame | Kind::NestedOther) => {
                let child_type = match kind {
                    Kind::NestedSame => t,
                    _ => self.other_type(t),
                };
                let tag = t.to_string();
                let mut frag = Fragment::word(self.marker("b", &tag));
                let mut room = budget - 2;
                if room >= 2 && self.rng.gen_bool(0.3) {
                    frag.append(Fragment::word(self.filler()));
                    room -= 1;
                }
                let after = if room >= 2 && self.rng.gen_bool(0.3) { 1 } else { 0 };
                let child = self.entity(child_type, depth + 1, room - after);
                frag.append(child);
                for _ in 0..after {
                    frag.append(Fragment::word(self.filler()));
                }
                frag.append(Fragment::word(self.marker("e", &tag)));
                let end = frag.tokens.len() - 1;
                frag.spans.push(EntitySpan::new(0, end, t));
                frag
            }
        }
    }

    fn sentence(&mut self) -> Fragment {
        let s = self.spec;
        let target = self.rng.gen_range(s.min_len..=s.max_len);
        let mut out = Fragment {
            tokens: Vec::new(),
            spans: Vec::new(),
        };
        while out.tokens.len() < target {
            let budget = s.max_len - out.tokens.len();
            if self.rng.gen_bool(s.entity_rate) {
                let t = self.rng.gen_range(0..s.num_types);
                let e = self.entity(t, 1, budget);
                out.append(e);
            } else {
                let w = self.filler();
                out.append(Fragment::word(w));
            }
        }
        out
    }
}

/// Generates `spec.sentences` labelled sentences. Equal specs give equal
/// corpora.
pub fn generate_corpus(spec: &GrammarSpec) -> Result<Vec<Example>, PipelineError> {
    spec.validate()?;
    let mut generator = Generator {
        spec,
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
    };
    (0..spec.sentences)
        .map(|index| {
            let frag = generator.sentence();
            let entities: EntitySet = frag.spans.into_iter().collect();
            let ex = Example {
                tokens: frag.tokens,
                pos: None,
                entities,
            };
            // The construction rules exclude every finding; a hit is a bug.
            if let Some(d) = validate_entity_set(&ex.entities, ex.len()).first() {
                return Err(PipelineError::Data {
                    index,
                    message: format!("generator emitted an invalid sentence: {d}"),
                });
            }
            Ok(ex)
        })
        .collect()
}
