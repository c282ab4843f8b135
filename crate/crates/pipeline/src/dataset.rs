//! JSON-lines sentences: `{"tokens": [...], "pos": [...], "entities": [[s, e, "TYPE"], ...]}`
//! with 0-based inclusive spans and an optional `pos` field.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use starner_core::entities::{validate_entity_set, EntitySet, EntitySpan};

use crate::PipelineError;

/// One line of a data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<Vec<String>>,
    #[serde(default)]
    pub entities: Vec<(usize, usize, String)>,
}

/// A sentence with typed spans resolved against the configured type names.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub tokens: Vec<String>,
    pub pos: Option<Vec<String>>,
    pub entities: EntitySet,
}

impl Example {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn from_record(record: Record, type_names: &[String]) -> Result<Self, String> {
        if record.tokens.is_empty() {
            return Err("sentence has no tokens".into());
        }
        if let Some(pos) = &record.pos {
            if pos.len() != record.tokens.len() {
                return Err(format!("{} pos tags for {} tokens", pos.len(), record.tokens.len()));
            }
        }
        let mut entities = EntitySet::new();
        for (start, end, label) in record.entities {
            let t = type_names
                .iter()
                .position(|n| *n == label)
                .ok_or_else(|| format!("unknown entity type {label:?}"))?;
            let span = EntitySpan::new(start, end, t);
            span.validate(record.tokens.len()).map_err(|e| e.to_string())?;
            entities.insert(span);
        }
        Ok(Self {
            tokens: record.tokens,
            pos: record.pos,
            entities,
        })
    }

    pub fn to_record(&self, type_names: &[String]) -> Record {
        Record {
            tokens: self.tokens.clone(),
            pos: self.pos.clone(),
            entities: self
                .entities
                .iter()
                .map(|s| (s.start, s.end, type_names[s.label].clone()))
                .collect(),
        }
    }

    /// Rejects partial same-type overlaps and layers the tag scheme cannot
    /// express.
    pub fn lint(&self) -> Result<(), String> {
        match validate_entity_set(&self.entities, self.len()).first() {
            None => Ok(()),
            Some(d) => Err(d.to_string()),
        }
    }
}

pub fn read_records(path: &Path) -> Result<Vec<Record>, PipelineError> {
    let file = std::fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    parse_records(std::io::BufReader::new(file), &path.display().to_string())
}

/// Parses JSON lines; blank lines are skipped and errors name the 1-based line.
pub fn parse_records(reader: impl BufRead, source: &str) -> Result<Vec<Record>, PipelineError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| PipelineError::Io {
            path: source.to_string(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| PipelineError::Parse {
            path: source.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("records serialize");
        buf.push(b'\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| PipelineError::io(path, e))?;
    file.write_all(&buf).map_err(|e| PipelineError::io(path, e))
}

/// Reads, resolves and lints a labelled data file.
pub fn load_examples(path: &Path, type_names: &[String]) -> Result<Vec<Example>, PipelineError> {
    let records = read_records(path)?;
    to_examples(records, type_names)
}

pub fn to_examples(records: Vec<Record>, type_names: &[String]) -> Result<Vec<Example>, PipelineError> {
    records
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            let ex = Example::from_record(r, type_names).map_err(|message| PipelineError::Data { index, message })?;
            ex.lint().map_err(|message| PipelineError::Data { index, message })?;
            Ok(ex)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        vec!["PER".into(), "ORG".into()]
    }

    #[test]
    fn records_round_trip_through_json_lines() {
        let text = concat!(
            r#"{"tokens":["a","b","c"],"entities":[[0,2,"ORG"],[0,0,"PER"]]}"#,
            "\n\n",
            r#"{"tokens":["x"],"pos":["NN"]}"#,
            "\n"
        );
        let recs = parse_records(text.as_bytes(), "mem").unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].pos.as_deref(), Some(&["NN".to_string()][..]));
        let ex = Example::from_record(recs[0].clone(), &names()).unwrap();
        assert_eq!(ex.entities.len(), 2);
        let back = ex.to_record(&names());
        assert_eq!(back.entities, vec![(0, 0, "PER".to_string()), (0, 2, "ORG".to_string())]);
        let line = serde_json::to_string(&recs[0]).unwrap();
        assert!(!line.contains("pos"));
    }

    #[test]
    fn parse_errors_name_the_line() {
        let text = "{\"tokens\":[\"a\"]}\nnot json\n";
        match parse_records(text.as_bytes(), "f.jsonl") {
            Err(PipelineError::Parse { line, path, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(path, "f.jsonl");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_examples_are_rejected() {
        let mk = |tokens: usize, ents: Vec<(usize, usize, &str)>| Record {
            tokens: vec!["t".into(); tokens],
            pos: None,
            entities: ents.into_iter().map(|(s, e, l)| (s, e, l.to_string())).collect(),
        };
        assert!(Example::from_record(mk(0, vec![]), &names()).is_err());
        assert!(Example::from_record(mk(2, vec![(0, 2, "PER")]), &names()).is_err());
        assert!(Example::from_record(mk(2, vec![(0, 1, "LOC")]), &names()).is_err());
        let overlapping = mk(4, vec![(0, 2, "PER"), (1, 3, "PER")]);
        assert!(matches!(
            to_examples(vec![mk(1, vec![]), overlapping], &names()),
            Err(PipelineError::Data { index: 1, .. })
        ));
    }
}
