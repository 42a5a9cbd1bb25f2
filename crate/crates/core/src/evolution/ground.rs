//! Mapping a structured model onto store statements.
//!
//! Statement counting rule for one model:
//!
//! * one statement per leaf value (property predicate, value as object);
//! * one `instance of` statement per contribution, typing it as `Contribution`;
//! * one link per hierarchy-node instance (parent predicate, node entity);
//! * two per group instance: the link (group predicate, group instance) and
//!   its `instance of` statement pointing at the shared concept.
//!
//! Two rows with three populated columns and no structure give 6 + 2 = 8.

use std::collections::BTreeSet;

use crate::annotator::{Alignment, PredicateBinding};
use crate::store::{ClassRef, EntityId, KgStore, Literal, Object, Origin, PredicateId, StatementId, StoreError};
use crate::structurer::{InstanceNode, StructuredModel, CONCEPT_CLASS};

use super::EvolutionError;

pub const INSTANCE_OF: &str = "instance of";
pub const CONTRIBUTION_CLASS: &str = "Contribution";
/// Class given to the `Contribution` class entity itself.
pub const CLASS_CLASS: &str = "Class";
/// Class of hierarchy-node and group instances.
pub const NODE_CLASS: &str = "Node";

pub fn contribution_label(source_id: &str, row: usize) -> String {
    format!("{source_id} contribution {}", row + 1)
}

/// What grounding touched in the store.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Grounding {
    /// Every statement the model maps to, in generation order, deduplicated.
    pub statements: Vec<StatementId>,
    pub entities_created: Vec<EntityId>,
    pub predicates_created: Vec<PredicateId>,
    pub statements_added: Vec<StatementId>,
}

struct Grounder<'a> {
    store: &'a mut KgStore,
    model: &'a StructuredModel,
    predicates: Vec<PredicateId>,
    instance_of: PredicateId,
    seen: BTreeSet<StatementId>,
    out: Grounding,
}

impl Grounder<'_> {
    fn entity(&mut self, label: &str, class: Option<&str>) -> Result<EntityId, EvolutionError> {
        let class = class.map(ClassRef::new);
        let before = self.store.find_entity(label, class.as_ref());
        let id = self.store.upsert_entity(label, class, Origin::Human)?;
        if before.is_none() {
            self.out.entities_created.push(id);
        }
        Ok(id)
    }

    fn predicate(&mut self, label: &str) -> Result<PredicateId, EvolutionError> {
        let before = self.store.find_predicate(label);
        let id = self.store.upsert_predicate(label, None)?;
        if before.is_none() {
            self.out.predicates_created.push(id);
        }
        Ok(id)
    }

    fn existing_entity(&self, id: EntityId) -> Result<EntityId, EvolutionError> {
        self.store
            .entity(id)
            .map(|e| e.id)
            .ok_or_else(|| EvolutionError::Integrity(format!("model references missing entity {id}")))
    }

    fn statement(&mut self, s: EntityId, p: PredicateId, o: Object) -> Result<(), EvolutionError> {
        let before = self.store.find_statement(s, p, &o);
        let id = self.store.add_statement(s, p, o)?;
        if before.is_none() {
            self.out.statements_added.push(id);
        }
        if self.seen.insert(id) {
            self.out.statements.push(id);
        }
        Ok(())
    }

    fn object(&mut self, text: &str, alignment: &Alignment) -> Result<Object, EvolutionError> {
        Ok(match alignment {
            Alignment::Entity { id } => Object::Entity(self.existing_entity(*id)?),
            Alignment::NewEntity { label, class_ref } => {
                Object::Entity(self.entity(label, class_ref.as_ref().map(|c| c.0.as_str()))?)
            }
            Alignment::Literal { datatype } => Object::Literal(Literal::new(text.trim(), *datatype)?),
        })
    }

    fn walk(&mut self, nodes: &[InstanceNode<'_>], subject: EntityId, prefix: &str) -> Result<(), EvolutionError> {
        for node in nodes {
            match node {
                InstanceNode::Property { column, values, children } => {
                    let p = self.predicates[*column];
                    for v in values.iter() {
                        let o = self.object(&v.text, &v.object)?;
                        self.statement(subject, p, o)?;
                    }
                    if !children.is_empty() {
                        let label = format!("{prefix} / {}", self.model.properties[*column].label);
                        let node = self.entity(&label, Some(NODE_CLASS))?;
                        self.statement(subject, p, Object::Entity(node))?;
                        self.walk(children, node, &label)?;
                    }
                }
                InstanceNode::Group { label, concept, members } => {
                    let concept = match concept {
                        Some(id) => self.existing_entity(*id)?,
                        None => self.entity(label, Some(CONCEPT_CLASS))?,
                    };
                    let p = self.predicate(label)?;
                    let inst_label = format!("{prefix} / {label}");
                    let inst = self.entity(&inst_label, Some(NODE_CLASS))?;
                    self.statement(subject, p, Object::Entity(inst))?;
                    self.statement(inst, self.instance_of, Object::Entity(concept))?;
                    self.walk(members, inst, &inst_label)?;
                }
            }
        }
        Ok(())
    }
}

/// Write the model's statements into `store`. On error the store may hold a
/// partial result, so callers ground into a copy.
fn ground_in_place(model: &StructuredModel, store: &mut KgStore) -> Result<Grounding, EvolutionError> {
    let mut g = Grounder {
        store,
        model,
        predicates: Vec::new(),
        instance_of: PredicateId(0),
        seen: BTreeSet::new(),
        out: Grounding::default(),
    };
    if model.contributions.is_empty() {
        return Ok(g.out);
    }
    for p in &model.properties {
        let id = match &p.predicate {
            PredicateBinding::Existing { id } => g
                .store
                .predicate(*id)
                .map(|p| p.id)
                .ok_or_else(|| EvolutionError::Integrity(format!("model references missing predicate {id}")))?,
            PredicateBinding::New { label } => g.predicate(label)?,
        };
        g.predicates.push(id);
    }
    g.instance_of = g.predicate(INSTANCE_OF)?;
    let class = g.entity(CONTRIBUTION_CLASS, Some(CLASS_CLASS))?;
    for c in &model.contributions {
        let label = contribution_label(&model.source_id, c.row);
        let subject = g.entity(&label, Some(CONTRIBUTION_CLASS))?;
        g.statement(subject, g.instance_of, Object::Entity(class))?;
        let nodes = model.instantiate(c);
        g.walk(&nodes, subject, &label)?;
    }
    Ok(g.out)
}

/// Ground atomically: `store` is only replaced when every statement went in.
pub fn ground(model: &StructuredModel, store: &mut KgStore) -> Result<Grounding, EvolutionError> {
    let mut next = store.clone();
    let out = ground_in_place(model, &mut next)?;
    *store = next;
    Ok(out)
}

impl From<StoreError> for EvolutionError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Validation(m) => EvolutionError::Validation(m),
            StoreError::Integrity(m) => EvolutionError::Integrity(m),
            StoreError::Snapshot(m) => EvolutionError::Classify(m),
        }
    }
}
