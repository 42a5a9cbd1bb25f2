//! Line-delimited JSON snapshot format.
//!
//! ```text
//! {"format":"tabkg-store","version":1}
//! {"record":"entity","id":"E1","label":"Berlin","class_ref":"City","created_by":"human"}
//! {"record":"predicate","id":"P1","label":"located in","description":null}
//! {"record":"statement","id":"S1","subject":"E2","predicate":"P1","object":{"entity":"E1"}}
//! {"record":"end","next_entity":3,"next_predicate":2,"next_statement":2,"records":3}
//! ```
//!
//! Entities come first, then predicates, then statements, each in id order.
//! The closing `end` record carries the id counters and the record count; a
//! file without it is treated as truncated.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassRef, Entity, EntityId, KgStore, Object, Origin, Predicate, PredicateId, Statement, StatementId, StoreError};

pub const SNAPSHOT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "tabkg-store";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case", deny_unknown_fields)]
enum Record {
    Entity {
        id: EntityId,
        label: String,
        class_ref: Option<ClassRef>,
        created_by: Origin,
    },
    Predicate {
        id: PredicateId,
        label: String,
        description: Option<String>,
    },
    Statement {
        id: StatementId,
        subject: EntityId,
        predicate: PredicateId,
        object: Object,
    },
    End {
        next_entity: u64,
        next_predicate: u64,
        next_statement: u64,
        records: usize,
    },
}

fn to_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("snapshot records serialize")
}

fn corrupt(line: usize, msg: impl std::fmt::Display) -> StoreError {
    StoreError::Snapshot(format!("line {line}: {msg}"))
}

impl KgStore {
    pub fn to_snapshot_bytes(&self) -> Vec<u8> {
        let mut out = String::new();
        let mut push = |line: String| {
            out.push_str(&line);
            out.push('\n');
        };
        push(to_line(&Header { format: FORMAT_NAME.into(), version: SNAPSHOT_VERSION }));
        for e in self.entities.values() {
            push(to_line(&Record::Entity {
                id: e.id,
                label: e.label.clone(),
                class_ref: e.class_ref.clone(),
                created_by: e.created_by,
            }));
        }
        for p in self.predicates.values() {
            push(to_line(&Record::Predicate { id: p.id, label: p.label.clone(), description: p.description.clone() }));
        }
        for s in self.statements.values() {
            push(to_line(&Record::Statement {
                id: s.id,
                subject: s.subject,
                predicate: s.predicate,
                object: s.object.clone(),
            }));
        }
        push(to_line(&Record::End {
            next_entity: self.next_entity,
            next_predicate: self.next_predicate,
            next_statement: self.next_statement,
            records: self.entities.len() + self.predicates.len() + self.statements.len(),
        }));
        out.into_bytes()
    }

    pub fn from_snapshot_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let text = std::str::from_utf8(bytes).map_err(|e| StoreError::Snapshot(format!("not UTF-8: {e}")))?;
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, first) = lines.next().ok_or_else(|| StoreError::Snapshot("empty file".into()))?;
        let header: Header = serde_json::from_str(first).map_err(|e| corrupt(1, e))?;
        if header.format != FORMAT_NAME {
            return Err(corrupt(1, format!("unknown format {:?}", header.format)));
        }
        if header.version != SNAPSHOT_VERSION {
            return Err(StoreError::Snapshot(format!(
                "version mismatch: file has {}, expected {SNAPSHOT_VERSION}",
                header.version
            )));
        }

        let mut store = KgStore::new();
        let mut seen = 0usize;
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(line).map_err(|e| corrupt(n, e))?;
            match record {
                Record::Entity { id, label, class_ref, created_by } => {
                    if store.entities.contains_key(&id) || label.trim().is_empty() {
                        return Err(corrupt(n, format!("duplicate or unlabeled entity {id}")));
                    }
                    store.insert_entity(Entity { id, label, class_ref, created_by });
                }
                Record::Predicate { id, label, description } => {
                    if store.predicates.contains_key(&id) || label.trim().is_empty() {
                        return Err(corrupt(n, format!("duplicate or unlabeled predicate {id}")));
                    }
                    store.insert_predicate(Predicate { id, label, description });
                }
                Record::Statement { id, subject, predicate, object } => {
                    store.check_refs(subject, predicate, &object).map_err(|e| corrupt(n, e))?;
                    let key = (subject, predicate, object.clone());
                    if store.statements.contains_key(&id) || store.triples.contains_key(&key) {
                        return Err(corrupt(n, format!("duplicate statement {id}")));
                    }
                    store.triples.insert(key, id);
                    store.statements.insert(id, Statement { id, subject, predicate, object });
                    store.next_statement = store.next_statement.max(id.0 + 1);
                }
                Record::End { next_entity, next_predicate, next_statement, records } => {
                    if records != seen {
                        return Err(corrupt(n, format!("expected {records} records, read {seen}")));
                    }
                    store.next_entity = store.next_entity.max(next_entity);
                    store.next_predicate = store.next_predicate.max(next_predicate);
                    store.next_statement = store.next_statement.max(next_statement);
                    return Ok(store);
                }
            }
            seen += 1;
        }
        Err(StoreError::Snapshot("truncated: missing end record".into()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let path = path.as_ref();
        fs::write(path, self.to_snapshot_bytes())
            .map_err(|e| StoreError::Snapshot(format!("cannot write {}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| StoreError::Snapshot(format!("cannot read {}: {e}", path.display())))?;
        Self::from_snapshot_bytes(&bytes)
    }
}
