//! Embedded knowledge-graph store: entities, predicates and statements with a
//! trigram label index for candidate lookup and line-delimited snapshots.
//!
//! Mutation goes through `&mut self`; callers that share a store wrap it in a
//! lock so that writes are serialized and readers see whole snapshots.

mod ids;
mod index;
mod similarity;
mod snapshot;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotator::CellType;
use crate::text::normalize;

pub use self::ids::{EntityId, PredicateId, StatementId};
use self::index::LabelIndex;
pub use self::similarity::{similarity, MAX_FUZZY};
pub use self::snapshot::SNAPSHOT_VERSION;

/// Minimum similarity for a label to be proposed as a candidate.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("integrity violation: {0}")]
    Integrity(String),
    #[error("snapshot error: {0}")]
    Snapshot(String),
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::Validation(_) => "ValidationError",
            StoreError::Integrity(_) => "IntegrityError",
            StoreError::Snapshot(_) => "SnapshotError",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassRef(pub String);

impl ClassRef {
    pub fn new(name: impl Into<String>) -> Self {
        ClassRef(name.into())
    }
}

impl fmt::Display for ClassRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Machine,
    Human,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub label: String,
    pub class_ref: Option<ClassRef>,
    pub created_by: Origin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub id: PredicateId,
    pub label: String,
    pub description: Option<String>,
}

/// Typed literal; the lexical form is valid under its datatype.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Literal {
    pub lexical: String,
    pub datatype: CellType,
}

impl Literal {
    pub fn new(lexical: impl Into<String>, datatype: CellType) -> Result<Self, StoreError> {
        let lexical = lexical.into();
        if datatype == CellType::Empty || !datatype.accepts(&lexical) {
            return Err(StoreError::Validation(format!("{lexical:?} is not a valid {datatype} lexeme")));
        }
        Ok(Self { lexical, datatype })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Object {
    Entity(EntityId),
    Literal(Literal),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub id: StatementId,
    pub subject: EntityId,
    pub predicate: PredicateId,
    pub object: Object,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Entity,
    Predicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateTarget {
    Entity(EntityId),
    Predicate(PredicateId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    Exact,
    Normalized,
    Fuzzy,
}

/// A ranked lookup hit. `score` is 1.0 exactly for exact and normalized matches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub target: CandidateTarget,
    pub label: String,
    pub score: f64,
    pub match_kind: MatchKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KgStore {
    entities: BTreeMap<EntityId, Entity>,
    predicates: BTreeMap<PredicateId, Predicate>,
    statements: BTreeMap<StatementId, Statement>,
    triples: HashMap<(EntityId, PredicateId, Object), StatementId>,
    entity_keys: HashMap<(String, Option<ClassRef>), EntityId>,
    predicate_keys: HashMap<String, PredicateId>,
    entity_index: LabelIndex<EntityId>,
    predicate_index: LabelIndex<PredicateId>,
    next_entity: u64,
    next_predicate: u64,
    next_statement: u64,
    threshold: f64,
}

impl Default for KgStore {
    fn default() -> Self {
        Self::new()
    }
}

fn clean_label(label: &str) -> Result<String, StoreError> {
    let trimmed = label.trim();
    if trimmed.is_empty() {
        return Err(StoreError::Validation("label must not be empty".into()));
    }
    Ok(trimmed.to_string())
}

impl KgStore {
    pub fn new() -> Self {
        Self {
            entities: BTreeMap::new(),
            predicates: BTreeMap::new(),
            statements: BTreeMap::new(),
            triples: HashMap::new(),
            entity_keys: HashMap::new(),
            predicate_keys: HashMap::new(),
            entity_index: LabelIndex::default(),
            predicate_index: LabelIndex::default(),
            next_entity: 1,
            next_predicate: 1,
            next_statement: 1,
            threshold: DEFAULT_THRESHOLD,
        }
    }

    /// Lookup threshold; not persisted in snapshots.
    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn entity(&self, id: EntityId) -> Option<&Entity> {
        self.entities.get(&id)
    }

    pub fn predicate(&self, id: PredicateId) -> Option<&Predicate> {
        self.predicates.get(&id)
    }

    pub fn statement(&self, id: StatementId) -> Option<&Statement> {
        self.statements.get(&id)
    }

    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn predicates(&self) -> impl Iterator<Item = &Predicate> {
        self.predicates.values()
    }

    pub fn statements(&self) -> impl Iterator<Item = &Statement> {
        self.statements.values()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn predicate_count(&self) -> usize {
        self.predicates.len()
    }

    pub fn statement_count(&self) -> usize {
        self.statements.len()
    }

    /// Entity that an upsert of `(label, class_ref)` would return, if any.
    pub fn find_entity(&self, label: &str, class_ref: Option<&ClassRef>) -> Option<EntityId> {
        self.entity_keys.get(&(normalize(label), class_ref.cloned())).copied()
    }

    pub fn find_predicate(&self, label: &str) -> Option<PredicateId> {
        self.predicate_keys.get(&normalize(label)).copied()
    }

    pub fn find_statement(&self, subject: EntityId, predicate: PredicateId, object: &Object) -> Option<StatementId> {
        self.triples.get(&(subject, predicate, object.clone())).copied()
    }

    /// Return the entity with the same normalized label and class, creating it
    /// when absent.
    pub fn upsert_entity(
        &mut self,
        label: &str,
        class_ref: Option<ClassRef>,
        origin: Origin,
    ) -> Result<EntityId, StoreError> {
        let label = clean_label(label)?;
        let key = (normalize(&label), class_ref.clone());
        if let Some(id) = self.entity_keys.get(&key) {
            return Ok(*id);
        }
        let id = EntityId(self.next_entity);
        self.next_entity += 1;
        self.insert_entity(Entity { id, label, class_ref, created_by: origin });
        Ok(id)
    }

    pub fn upsert_predicate(&mut self, label: &str, description: Option<String>) -> Result<PredicateId, StoreError> {
        let label = clean_label(label)?;
        if let Some(id) = self.predicate_keys.get(&normalize(&label)) {
            return Ok(*id);
        }
        let id = PredicateId(self.next_predicate);
        self.next_predicate += 1;
        self.insert_predicate(Predicate { id, label, description });
        Ok(id)
    }

    fn insert_entity(&mut self, entity: Entity) {
        self.entity_keys
            .entry((normalize(&entity.label), entity.class_ref.clone()))
            .or_insert(entity.id);
        self.entity_index.insert(entity.id, &entity.label);
        self.next_entity = self.next_entity.max(entity.id.0 + 1);
        self.entities.insert(entity.id, entity);
    }

    fn insert_predicate(&mut self, predicate: Predicate) {
        self.predicate_keys.entry(normalize(&predicate.label)).or_insert(predicate.id);
        self.predicate_index.insert(predicate.id, &predicate.label);
        self.next_predicate = self.next_predicate.max(predicate.id.0 + 1);
        self.predicates.insert(predicate.id, predicate);
    }

    fn check_refs(&self, subject: EntityId, predicate: PredicateId, object: &Object) -> Result<(), StoreError> {
        if !self.entities.contains_key(&subject) {
            return Err(StoreError::Integrity(format!("unknown subject {subject}")));
        }
        if !self.predicates.contains_key(&predicate) {
            return Err(StoreError::Integrity(format!("unknown predicate {predicate}")));
        }
        match object {
            Object::Entity(o) if !self.entities.contains_key(o) => {
                Err(StoreError::Integrity(format!("unknown object {o}")))
            }
            Object::Literal(l) if l.datatype == CellType::Empty || !l.datatype.accepts(&l.lexical) => Err(
                StoreError::Validation(format!("{:?} is not a valid {} lexeme", l.lexical, l.datatype)),
            ),
            _ => Ok(()),
        }
    }

    /// Store a statement, returning the existing id for a duplicate triple.
    pub fn add_statement(
        &mut self,
        subject: EntityId,
        predicate: PredicateId,
        object: Object,
    ) -> Result<StatementId, StoreError> {
        self.check_refs(subject, predicate, &object)?;
        let key = (subject, predicate, object);
        if let Some(id) = self.triples.get(&key) {
            return Ok(*id);
        }
        let id = StatementId(self.next_statement);
        self.next_statement += 1;
        let (subject, predicate, object) = key.clone();
        self.triples.insert(key, id);
        self.statements.insert(id, Statement { id, subject, predicate, object });
        Ok(id)
    }

    /// Remove an entity that no statement references.
    pub fn remove_entity(&mut self, id: EntityId) -> Result<Entity, StoreError> {
        let referenced = self.statements.values().any(|s| s.subject == id || s.object == Object::Entity(id));
        if referenced {
            return Err(StoreError::Integrity(format!("{id} is referenced by statements")));
        }
        let entity = self.entities.remove(&id).ok_or_else(|| StoreError::Integrity(format!("unknown entity {id}")))?;
        let key = (normalize(&entity.label), entity.class_ref.clone());
        if self.entity_keys.get(&key) == Some(&id) {
            self.entity_keys.remove(&key);
            if let Some(other) = self.entities.values().find(|e| (normalize(&e.label), e.class_ref.clone()) == key) {
                self.entity_keys.insert(key, other.id);
            }
        }
        self.entity_index.remove(id, &entity.label);
        Ok(entity)
    }

    /// Verify that every statement resolves.
    pub fn check_integrity(&self) -> Result<(), StoreError> {
        for s in self.statements.values() {
            self.check_refs(s.subject, s.predicate, &s.object)
                .map_err(|e| StoreError::Integrity(format!("statement {}: {e}", s.id)))?;
        }
        Ok(())
    }

    /// Ranked candidates for `query`, sorted by score (descending), then label
    /// and id. Every item scoring at least the threshold is eligible.
    pub fn lookup_candidates(&self, query: &str, kind: ItemKind, limit: usize) -> Vec<Candidate> {
        match kind {
            ItemKind::Entity => self.lookup_entities(query, None, limit),
            ItemKind::Predicate => {
                let mut hits: Vec<Candidate> = self
                    .predicate_index
                    .search(query, self.threshold)
                    .into_iter()
                    .map(|(id, score)| {
                        let label = &self.predicates[&id].label;
                        candidate(CandidateTarget::Predicate(id), label, query, score)
                    })
                    .collect();
                rank(&mut hits, limit);
                hits
            }
        }
    }

    /// Entity lookup, optionally restricted to one class.
    pub fn lookup_entities(&self, query: &str, class: Option<&ClassRef>, limit: usize) -> Vec<Candidate> {
        let mut hits: Vec<Candidate> = self
            .entity_index
            .search(query, self.threshold)
            .into_iter()
            .filter_map(|(id, score)| {
                let entity = &self.entities[&id];
                if class.is_some() && entity.class_ref.as_ref() != class {
                    return None;
                }
                Some(candidate(CandidateTarget::Entity(id), &entity.label, query, score))
            })
            .collect();
        rank(&mut hits, limit);
        hits
    }
}

fn candidate(target: CandidateTarget, label: &str, query: &str, score: f64) -> Candidate {
    let match_kind = if label == query {
        MatchKind::Exact
    } else if score == 1.0 {
        MatchKind::Normalized
    } else {
        MatchKind::Fuzzy
    };
    Candidate { target, label: label.to_string(), score, match_kind }
}

/// Total order used for candidate lists.
pub fn candidate_order(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.label.cmp(&b.label))
        .then_with(|| a.target.cmp(&b.target))
}

fn rank(hits: &mut Vec<Candidate>, limit: usize) {
    hits.sort_by(candidate_order);
    hits.truncate(limit);
}
