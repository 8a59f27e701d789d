//! Dataset records and NDJSON input/output.
//!
//! One JSON record per line; every validation error carries the offending
//! line number. Spans are inclusive token index pairs; relations and event
//! arguments reference entities by position in the record's entity list.

use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::schema::{LabelSchema, NodeKind, Span};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityAnn {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub entity_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerAnn {
    pub start: usize,
    pub end: usize,
    pub event_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationAnn {
    pub head_entity_index: usize,
    pub tail_entity_index: usize,
    #[serde(rename = "type")]
    pub relation_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgAnn {
    pub entity_index: usize,
    pub role: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventAnn {
    pub trigger_index: usize,
    #[serde(default)]
    pub args: Vec<ArgAnn>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub entities: Vec<EntityAnn>,
    #[serde(default)]
    pub triggers: Vec<TriggerAnn>,
    #[serde(default)]
    pub relations: Vec<RelationAnn>,
    #[serde(default)]
    pub events: Vec<EventAnn>,
}

impl DatasetRecord {
    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        for e in &self.entities {
            check_span(e.start, e.end, n)?;
        }
        for t in &self.triggers {
            check_span(t.start, t.end, n)?;
        }
        let mut seen = std::collections::HashSet::new();
        for r in &self.relations {
            if r.head_entity_index >= self.entities.len()
                || r.tail_entity_index >= self.entities.len()
            {
                return Err(Error::Schema(format!(
                    "relation references entity {} of {}",
                    r.head_entity_index.max(r.tail_entity_index),
                    self.entities.len()
                )));
            }
            if r.head_entity_index == r.tail_entity_index {
                return Err(Error::Schema("relation is a self-loop".into()));
            }
            if !seen.insert((r.head_entity_index, r.tail_entity_index, r.relation_type.clone())) {
                return Err(Error::Schema(format!(
                    "duplicate relation ({}, {}, {})",
                    r.head_entity_index, r.tail_entity_index, r.relation_type
                )));
            }
        }
        for ev in &self.events {
            if ev.trigger_index >= self.triggers.len() {
                return Err(Error::Schema(format!(
                    "event references trigger {} of {}",
                    ev.trigger_index,
                    self.triggers.len()
                )));
            }
            for a in &ev.args {
                if a.entity_index >= self.entities.len() {
                    return Err(Error::Schema(format!(
                        "argument references entity {} of {}",
                        a.entity_index,
                        self.entities.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Checks every label against the schema.
    pub fn validate_labels(&self, schema: &LabelSchema) -> Result<()> {
        for e in &self.entities {
            if schema.node_label_id(NodeKind::Entity, &e.entity_type).is_none() {
                return Err(Error::Schema(format!(
                    "unknown entity type `{}`",
                    e.entity_type
                )));
            }
        }
        for t in &self.triggers {
            if schema.node_label_id(NodeKind::Trigger, &t.event_type).is_none() {
                return Err(Error::Schema(format!(
                    "unknown event type `{}`",
                    t.event_type
                )));
            }
        }
        for r in &self.relations {
            if !schema.relation_labels.contains(&r.relation_type) {
                return Err(Error::Schema(format!(
                    "unknown relation type `{}`",
                    r.relation_type
                )));
            }
        }
        for ev in &self.events {
            for a in &ev.args {
                if !schema.role_labels.contains(&a.role) {
                    return Err(Error::Schema(format!("unknown role `{}`", a.role)));
                }
            }
        }
        Ok(())
    }

    pub fn entity_span(&self, index: usize) -> Span {
        let e = &self.entities[index];
        Span {
            start: e.start,
            end: e.end,
        }
    }

    pub fn trigger_span(&self, index: usize) -> Span {
        let t = &self.triggers[index];
        Span {
            start: t.start,
            end: t.end,
        }
    }
}

fn check_span(start: usize, end: usize, n: usize) -> Result<()> {
    if end < start {
        return Err(Error::Schema(format!("span end {} precedes start {}", end, start)));
    }
    if end >= n {
        return Err(Error::Schema(format!(
            "span {}..{} out of range for {} tokens",
            start, end, n
        )));
    }
    Ok(())
}

/// Loads and validates an NDJSON dataset.
pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(&line).map_err(|e| Error::Dataset {
            line: lineno,
            message: format!("malformed JSON: {}", e),
        })?;
        record.validate().map_err(|e| Error::Dataset {
            line: lineno,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn save_dataset(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut file, r)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> DatasetRecord {
        DatasetRecord {
            id: "s1".into(),
            tokens: vec!["a".into(), "b".into(), "c".into()],
            entities: vec![
                EntityAnn {
                    start: 0,
                    end: 0,
                    entity_type: "PER".into(),
                },
                EntityAnn {
                    start: 2,
                    end: 2,
                    entity_type: "ORG".into(),
                },
            ],
            triggers: vec![TriggerAnn {
                start: 1,
                end: 1,
                event_type: "Attack".into(),
            }],
            relations: vec![RelationAnn {
                head_entity_index: 0,
                tail_entity_index: 1,
                relation_type: "Part".into(),
            }],
            events: vec![EventAnn {
                trigger_index: 0,
                args: vec![ArgAnn {
                    entity_index: 0,
                    role: "Agent".into(),
                }],
            }],
        }
    }

    #[test]
    fn roundtrip_is_lossless_and_order_preserving() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ndjson");
        let mut records = vec![record(), record()];
        records[1].id = "s2".into();
        save_dataset(&path, &records).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded, records);
    }

    #[test]
    fn reversed_span_is_rejected_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ndjson");
        let mut r = record();
        r.entities[0].start = 2;
        r.entities[0].end = 1;
        let good = record();
        std::fs::write(
            &path,
            format!(
                "{}\n{}\n",
                serde_json::to_string(&good).unwrap(),
                serde_json::to_string(&r).unwrap()
            ),
        )
        .unwrap();
        match load_dataset(&path) {
            Err(Error::Dataset { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected dataset error, got {:?}", other.map(|v| v.len())),
        }
    }

    #[test]
    fn dangling_relation_index_is_rejected() {
        let mut r = record();
        r.relations[0].tail_entity_index = 9;
        assert!(r.validate().is_err());
    }

    #[test]
    fn duplicate_relation_is_rejected() {
        let mut r = record();
        r.relations.push(r.relations[0].clone());
        assert!(r.validate().is_err());
    }

    #[test]
    fn hand_authored_fixture_parses_with_expected_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.ndjson");
        let lines = [
            r#"{"id":"a","tokens":["troops","attacked","the","city"],"entities":[{"start":0,"end":0,"type":"PER"},{"start":3,"end":3,"type":"GPE"}],"triggers":[{"start":1,"end":1,"event_type":"Attack"}],"relations":[],"events":[{"trigger_index":0,"args":[{"entity_index":0,"role":"Attacker"},{"entity_index":1,"role":"Place"}]}]}"#,
            r#"{"id":"b","tokens":["he","works","for","acme"],"entities":[{"start":0,"end":0,"type":"PER"},{"start":3,"end":3,"type":"ORG"}],"triggers":[],"relations":[{"head_entity_index":0,"tail_entity_index":1,"type":"EMP"}],"events":[]}"#,
            r#"{"id":"c","tokens":["nothing","here"],"entities":[],"triggers":[],"relations":[],"events":[]}"#,
        ];
        std::fs::write(&path, lines.join("\n")).unwrap();
        let records = load_dataset(&path).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[0].events[0].args.len(), 2);
        assert_eq!(records[1].relations.len(), 1);
        assert!(records[2].entities.is_empty());
    }
}
