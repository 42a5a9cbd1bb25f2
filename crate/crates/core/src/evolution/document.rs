//! JSON-LD shaped semantic document.
//!
//! Top-level keys (all objects serialize with sorted keys):
//!
//! * `@context`: `label`, `xsd`, `Contribution`, and one entry per property or
//!   group key mapping it to a predicate IRI;
//! * `@graph`: one node per contribution with `@id`, `@type`, `label` and one
//!   array per populated property key. Hierarchy parents get an extra node
//!   object holding the children; groups get a node typed by their concept;
//! * `metadata`: the table metadata;
//! * `schema`: `properties` (key, label, column, predicate, confirmed,
//!   datatype, linked_values) and `structure` (the property tree by key);
//! * `source`: the table source id.
//!
//! Property keys are slugs of the labels, suffixed `_2`, `_3`... on clashes.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Map, Value};

use crate::annotator::{Alignment, PredicateBinding};
use crate::store::KgStore;
use crate::structurer::{InstanceNode, LeafValue, SchemaNode, StructuredModel};
use crate::text::slug;

use super::ground::contribution_label;
use super::ntriples::{entity_iri, predicate_iri, XSD};

pub const RDFS_LABEL: &str = "http://www.w3.org/2000/01/rdf-schema#label";

struct Keys {
    properties: Vec<String>,
    groups: BTreeMap<String, String>,
}

fn unique(base: String, used: &mut BTreeSet<String>) -> String {
    let mut key = base.clone();
    let mut n = 2;
    while !used.insert(key.clone()) {
        key = format!("{base}_{n}");
        n += 1;
    }
    key
}

fn assign_keys(model: &StructuredModel) -> Keys {
    let mut used: BTreeSet<String> = ["label", "xsd", "Contribution"].iter().map(|s| s.to_string()).collect();
    let properties = model.properties.iter().map(|p| unique(slug(&p.label), &mut used)).collect();
    let mut groups = BTreeMap::new();
    fn visit(nodes: &[SchemaNode], used: &mut BTreeSet<String>, groups: &mut BTreeMap<String, String>) {
        for n in nodes {
            match n {
                SchemaNode::Property { children, .. } => visit(children, used, groups),
                SchemaNode::Group { label, members, .. } => {
                    if !groups.contains_key(label) {
                        let key = unique(slug(label), used);
                        groups.insert(label.clone(), key);
                    }
                    visit(members, used, groups);
                }
            }
        }
    }
    visit(&model.schema, &mut used, &mut groups);
    Keys { properties, groups }
}

fn compact_datatype(iri: &str) -> String {
    match iri.strip_prefix(XSD) {
        Some(local) => format!("xsd:{local}"),
        None => iri.to_string(),
    }
}

struct Writer<'a> {
    model: &'a StructuredModel,
    store: &'a KgStore,
    base: &'a str,
    keys: Keys,
}

impl Writer<'_> {
    fn property_iri(&self, column: usize) -> String {
        match &self.model.properties[column].predicate {
            PredicateBinding::Existing { id } => predicate_iri(self.base, *id),
            PredicateBinding::New { .. } => format!("{}property/{}", self.base, self.keys.properties[column]),
        }
    }

    fn group_iri(&self, label: &str) -> String {
        match self.store.find_predicate(label) {
            Some(id) => predicate_iri(self.base, id),
            None => format!("{}property/{}", self.base, self.keys.groups[label]),
        }
    }

    fn concept_ref(&self, label: &str, concept: Option<crate::store::EntityId>) -> String {
        match concept {
            Some(id) => entity_iri(self.base, id),
            None => format!("_:concept-{}", slug(label)),
        }
    }

    fn value(&self, v: &LeafValue) -> Value {
        match &v.object {
            Alignment::Entity { id } => {
                let label = self.store.entity(*id).map(|e| e.label.clone()).unwrap_or_else(|| v.text.clone());
                json!({ "@id": entity_iri(self.base, *id), "label": label })
            }
            Alignment::NewEntity { label, class_ref } => {
                let mut node = json!({ "@id": format!("_:entity-{}", slug(label)), "label": label });
                if let Some(c) = class_ref {
                    node["@type"] = Value::String(c.0.clone());
                }
                node
            }
            Alignment::Literal { datatype } => {
                let lit = crate::store::Literal { lexical: v.text.clone(), datatype: *datatype };
                json!({ "@value": v.text, "@type": compact_datatype(&super::ntriples::datatype_iri(&lit)) })
            }
        }
    }

    fn fill(&self, target: &mut Map<String, Value>, nodes: &[InstanceNode<'_>], id_prefix: &str, label_prefix: &str) {
        for node in nodes {
            match node {
                InstanceNode::Property { column, values, children } => {
                    let key = &self.keys.properties[*column];
                    let mut items: Vec<Value> = values.iter().map(|v| self.value(v)).collect();
                    if !children.is_empty() {
                        let label = format!("{label_prefix} / {}", self.model.properties[*column].label);
                        let id = format!("{id_prefix}-{key}");
                        let mut inner = Map::new();
                        inner.insert("@id".into(), Value::String(id.clone()));
                        inner.insert("label".into(), Value::String(label.clone()));
                        self.fill(&mut inner, children, &id, &label);
                        items.push(Value::Object(inner));
                    }
                    target.insert(key.clone(), Value::Array(items));
                }
                InstanceNode::Group { label, concept, members } => {
                    let key = &self.keys.groups[*label];
                    let inst_label = format!("{label_prefix} / {label}");
                    let id = format!("{id_prefix}-{key}");
                    let mut inner = Map::new();
                    inner.insert("@id".into(), Value::String(id.clone()));
                    inner.insert("@type".into(), Value::String(self.concept_ref(label, *concept)));
                    inner.insert("label".into(), Value::String(inst_label.clone()));
                    self.fill(&mut inner, members, &id, &inst_label);
                    target.insert(key.clone(), Value::Array(vec![Value::Object(inner)]));
                }
            }
        }
    }

    fn structure(&self, nodes: &[SchemaNode]) -> Value {
        Value::Array(
            nodes
                .iter()
                .map(|n| match n {
                    SchemaNode::Property { column, children } => {
                        json!({ "property": self.keys.properties[*column], "children": self.structure(children) })
                    }
                    SchemaNode::Group { label, concept, members } => json!({
                        "group": self.keys.groups[label],
                        "label": label,
                        "concept": self.concept_ref(label, *concept),
                        "members": self.structure(members),
                    }),
                })
                .collect(),
        )
    }

    fn document(&self) -> Value {
        let mut context = Map::new();
        context.insert("label".into(), Value::String(RDFS_LABEL.into()));
        context.insert("xsd".into(), Value::String(XSD.into()));
        context.insert("Contribution".into(), Value::String(format!("{}class/Contribution", self.base)));
        for (column, key) in self.keys.properties.iter().enumerate() {
            context.insert(key.clone(), Value::String(self.property_iri(column)));
        }
        for (label, key) in &self.keys.groups {
            context.insert(key.clone(), Value::String(self.group_iri(label)));
        }

        let graph: Vec<Value> = self
            .model
            .contributions
            .iter()
            .map(|c| {
                let label = contribution_label(&self.model.source_id, c.row);
                let id = format!("_:contribution-{}", c.row + 1);
                let mut node = Map::new();
                node.insert("@id".into(), Value::String(id.clone()));
                node.insert("@type".into(), Value::String("Contribution".into()));
                node.insert("label".into(), Value::String(label.clone()));
                self.fill(&mut node, &self.model.instantiate(c), &id, &label);
                Value::Object(node)
            })
            .collect();

        let properties: Vec<Value> = self
            .model
            .properties
            .iter()
            .map(|p| {
                let linked = self
                    .model
                    .contributions
                    .iter()
                    .flat_map(|c| c.values[p.column].iter())
                    .filter(|v| !matches!(v.object, Alignment::Literal { .. }))
                    .count();
                json!({
                    "key": self.keys.properties[p.column],
                    "label": p.label,
                    "column": p.column,
                    "predicate": self.property_iri(p.column),
                    "confirmed": p.confirmed,
                    "datatype": p.datatype,
                    "linked_values": linked,
                })
            })
            .collect();

        json!({
            "@context": context,
            "@graph": graph,
            "metadata": self.model.metadata,
            "schema": { "properties": properties, "structure": self.structure(&self.model.schema) },
            "source": self.model.source_id,
        })
    }
}

/// Render the stage-4 document. Pure: the store is only read for labels and
/// existing ids.
pub fn export_semantic_doc(model: &StructuredModel, store: &KgStore, base: &str) -> Vec<u8> {
    let writer = Writer { model, store, base, keys: assign_keys(model) };
    let mut bytes = serde_json::to_vec_pretty(&writer.document()).expect("document serializes");
    bytes.push(b'\n');
    bytes
}
