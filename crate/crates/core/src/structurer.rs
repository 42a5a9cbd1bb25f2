//! Property hierarchies and property groupings.
//!
//! Both are pure transformations over a [`StructuredModel`]: the human
//! supplies a spec, the transformation rewrites the shared schema tree, and
//! every contribution (table row) is instantiated from that one tree. Leaf
//! values are never touched, only re-homed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotator::{literal_type, majority, Alignment, CellType, PredicateBinding};
use crate::store::{ClassRef, EntityId, KgStore};
use crate::table::Table;
use crate::text::normalize;

/// Class of the shared concept entity behind a property group.
pub const CONCEPT_CLASS: &str = "Concept";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HierarchyEdge {
    pub parent: String,
    pub child: String,
}

impl HierarchyEdge {
    pub fn new(parent: impl Into<String>, child: impl Into<String>) -> Self {
        Self { parent: parent.into(), child: child.into() }
    }
}

/// Parent/child edges between properties, referenced by column label.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HierarchySpec {
    pub edges: Vec<HierarchyEdge>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupSpec {
    pub group_label: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    Cycle { properties: Vec<String> },
    MultiParent { child: String, parents: Vec<String> },
    SelfLoop { property: String },
    UnknownProperty { property: String },
    AmbiguousProperty { property: String, columns: Vec<usize> },
    /// The property already sits below another node.
    AlreadyNested { property: String },
    EmptyGroupLabel,
    TooFewMembers { group: String, found: usize },
    DuplicateMember { group: String, property: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Cycle { properties } => write!(f, "cycle through [{}]", properties.join(", ")),
            Violation::MultiParent { child, parents } => {
                write!(f, "{child:?} has several parents: [{}]", parents.join(", "))
            }
            Violation::SelfLoop { property } => write!(f, "{property:?} is its own parent"),
            Violation::UnknownProperty { property } => write!(f, "unknown property {property:?}"),
            Violation::AmbiguousProperty { property, columns } => {
                write!(f, "{property:?} matches several columns {columns:?}")
            }
            Violation::AlreadyNested { property } => write!(f, "{property:?} is already nested"),
            Violation::EmptyGroupLabel => write!(f, "group label is empty"),
            Violation::TooFewMembers { group, found } => {
                write!(f, "group {group:?} needs at least 2 distinct members, found {found}")
            }
            Violation::DuplicateMember { group, property } => {
                write!(f, "group {group:?} lists {property:?} twice")
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StructureError {
    #[error("invalid structure spec: {}", join_violations(.0))]
    Spec(Vec<Violation>),
}

impl StructureError {
    pub fn code(&self) -> &'static str {
        "SpecError"
    }

    pub fn violations(&self) -> &[Violation] {
        match self {
            StructureError::Spec(v) => v,
        }
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

fn resolve(labels: &[String], property: &str) -> Result<usize, Violation> {
    let wanted = normalize(property);
    let hits: Vec<usize> = labels.iter().enumerate().filter(|(_, l)| normalize(l) == wanted).map(|(i, _)| i).collect();
    match hits.as_slice() {
        [] => Err(Violation::UnknownProperty { property: property.to_string() }),
        [one] => Ok(*one),
        _ => Err(Violation::AmbiguousProperty { property: property.to_string(), columns: hits }),
    }
}

/// Resolve edges against column labels, collecting every violation.
fn check_edges(spec: &HierarchySpec, labels: &[String]) -> Result<Vec<(usize, usize)>, Vec<Violation>> {
    let mut violations = Vec::new();
    let mut edges = BTreeSet::new();
    for edge in &spec.edges {
        let parent = resolve(labels, &edge.parent).map_err(|v| violations.push(v)).ok();
        let child = resolve(labels, &edge.child).map_err(|v| violations.push(v)).ok();
        if let (Some(p), Some(c)) = (parent, child) {
            if p == c {
                violations.push(Violation::SelfLoop { property: labels[p].clone() });
            } else {
                edges.insert((p, c));
            }
        }
    }

    let mut parents: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(p, c) in &edges {
        parents.entry(c).or_default().push(p);
    }
    for (c, ps) in &parents {
        if ps.len() > 1 {
            violations.push(Violation::MultiParent {
                child: labels[*c].clone(),
                parents: ps.iter().map(|p| labels[*p].clone()).collect(),
            });
        }
    }
    for cycle in find_cycles(&edges) {
        violations.push(Violation::Cycle { properties: cycle.iter().map(|c| labels[*c].clone()).collect() });
    }

    if violations.is_empty() {
        Ok(edges.into_iter().collect())
    } else {
        Err(violations)
    }
}

/// Elementary cycles reachable by depth-first search, each rotated to start
/// at its smallest column.
fn find_cycles(edges: &BTreeSet<(usize, usize)>) -> BTreeSet<Vec<usize>> {
    let mut children: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(p, c) in edges {
        children.entry(p).or_default().push(c);
    }
    let mut found = BTreeSet::new();
    let mut done = BTreeSet::new();
    for &start in children.keys() {
        let mut stack = Vec::new();
        visit(start, &children, &mut stack, &mut done, &mut found);
    }
    found
}

fn visit(
    node: usize,
    children: &BTreeMap<usize, Vec<usize>>,
    stack: &mut Vec<usize>,
    done: &mut BTreeSet<usize>,
    found: &mut BTreeSet<Vec<usize>>,
) {
    if let Some(pos) = stack.iter().position(|n| *n == node) {
        let mut cycle = stack[pos..].to_vec();
        let min = cycle.iter().enumerate().min_by_key(|(_, c)| **c).map(|(i, _)| i).unwrap_or(0);
        cycle.rotate_left(min);
        found.insert(cycle);
        return;
    }
    if done.contains(&node) {
        return;
    }
    stack.push(node);
    for &next in children.get(&node).into_iter().flatten() {
        visit(next, children, stack, done, found);
    }
    stack.pop();
    done.insert(node);
}

/// Check a hierarchy spec against a table's columns.
pub fn validate_hierarchy(spec: &HierarchySpec, table: &Table) -> Result<(), Vec<Violation>> {
    let labels: Vec<String> = table.header().iter().map(|h| h.raw_label.clone()).collect();
    check_edges(spec, &labels).map(|_| ())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyInfo {
    pub column: usize,
    pub label: String,
    pub predicate: PredicateBinding,
    /// False when the predicate is a fallback nobody confirmed.
    pub confirmed: bool,
    pub datatype: CellType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafValue {
    pub text: String,
    pub object: Alignment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contribution {
    pub row: usize,
    /// Leaf values per column, in table order.
    pub values: Vec<Vec<LeafValue>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum SchemaNode {
    Property {
        column: usize,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        children: Vec<SchemaNode>,
    },
    Group {
        label: String,
        /// Existing concept entity reused for this group, if the store has one.
        concept: Option<EntityId>,
        members: Vec<SchemaNode>,
    },
}

impl SchemaNode {
    fn leaf(column: usize) -> Self {
        SchemaNode::Property { column, children: Vec::new() }
    }

    fn kids(&self) -> &[SchemaNode] {
        match self {
            SchemaNode::Property { children, .. } => children,
            SchemaNode::Group { members, .. } => members,
        }
    }

    fn kids_mut(&mut self) -> &mut Vec<SchemaNode> {
        match self {
            SchemaNode::Property { children, .. } => children,
            SchemaNode::Group { members, .. } => members,
        }
    }

    pub fn column(&self) -> Option<usize> {
        match self {
            SchemaNode::Property { column, .. } => Some(*column),
            SchemaNode::Group { .. } => None,
        }
    }

    /// Smallest column in this subtree; sibling lists are kept in this order.
    pub fn min_column(&self) -> usize {
        let own = self.column().unwrap_or(usize::MAX);
        self.kids().iter().map(SchemaNode::min_column).fold(own, usize::min)
    }

    fn contains(&self, column: usize) -> bool {
        self.column() == Some(column) || self.kids().iter().any(|k| k.contains(column))
    }
}

fn sort_nodes(nodes: &mut [SchemaNode]) {
    nodes.sort_by_key(SchemaNode::min_column);
}

/// Remove the property node for `column` from anywhere in the forest.
fn detach(nodes: &mut Vec<SchemaNode>, column: usize) -> Option<SchemaNode> {
    if let Some(i) = nodes.iter().position(|n| n.column() == Some(column)) {
        return Some(nodes.remove(i));
    }
    nodes.iter_mut().find_map(|n| detach(n.kids_mut(), column))
}

fn find_mut(nodes: &mut [SchemaNode], column: usize) -> Option<&mut SchemaNode> {
    for node in nodes {
        if node.column() == Some(column) {
            return Some(node);
        }
        if let Some(hit) = find_mut(node.kids_mut(), column) {
            return Some(hit);
        }
    }
    None
}

fn resort(nodes: &mut [SchemaNode]) {
    for n in nodes.iter_mut() {
        resort(n.kids_mut());
    }
    sort_nodes(nodes);
}

/// One contribution's view of the schema, with empty branches pruned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum InstanceNode<'a> {
    Property { column: usize, values: &'a [LeafValue], children: Vec<InstanceNode<'a>> },
    Group { label: &'a str, concept: Option<EntityId>, members: Vec<InstanceNode<'a>> },
}

impl<'a> InstanceNode<'a> {
    /// Structure without values, for comparing contributions.
    pub fn shape(&self) -> String {
        let (head, kids) = match self {
            InstanceNode::Property { column, children, .. } => (format!("p{column}"), children),
            InstanceNode::Group { label, members, .. } => (format!("g:{label}"), members),
        };
        if kids.is_empty() {
            head
        } else {
            format!("{head}({})", kids.iter().map(InstanceNode::shape).collect::<Vec<_>>().join(","))
        }
    }

    pub fn children(&self) -> &[InstanceNode<'a>] {
        match self {
            InstanceNode::Property { children, .. } => children,
            InstanceNode::Group { members, .. } => members,
        }
    }
}

fn instantiate_nodes<'a>(nodes: &'a [SchemaNode], contribution: &'a Contribution) -> Vec<InstanceNode<'a>> {
    nodes
        .iter()
        .filter_map(|node| match node {
            SchemaNode::Property { column, children } => {
                let values = contribution.values[*column].as_slice();
                let children = instantiate_nodes(children, contribution);
                (!values.is_empty() || !children.is_empty()).then_some(InstanceNode::Property {
                    column: *column,
                    values,
                    children,
                })
            }
            SchemaNode::Group { label, concept, members } => {
                let members = instantiate_nodes(members, contribution);
                (!members.is_empty()).then_some(InstanceNode::Group { label, concept: *concept, members })
            }
        })
        .collect()
}

/// Every (column, value) leaf reachable in an instance forest.
pub fn leaf_pairs<'a>(nodes: &[InstanceNode<'a>]) -> Vec<(usize, &'a LeafValue)> {
    let mut out = Vec::new();
    fn walk<'a>(nodes: &[InstanceNode<'a>], out: &mut Vec<(usize, &'a LeafValue)>) {
        for n in nodes {
            if let InstanceNode::Property { column, values, .. } = n {
                out.extend(values.iter().map(|v| (*column, v)));
            }
            walk(n.children(), out);
        }
    }
    walk(nodes, &mut out);
    out
}

/// Annotated table plus the property tree shared by all contributions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredModel {
    pub source_id: String,
    pub metadata: BTreeMap<String, String>,
    pub properties: Vec<PropertyInfo>,
    pub schema: Vec<SchemaNode>,
    pub contributions: Vec<Contribution>,
}

/// Predicate label for a header; blank headers fall back to `column_N`.
pub fn property_label(raw: &str, column: usize) -> String {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        format!("column_{}", column + 1)
    } else {
        trimmed.to_string()
    }
}

impl StructuredModel {
    /// Flat model treating every value as a literal of its column's voted type.
    pub fn from_table(table: &Table) -> Self {
        let properties = table
            .header()
            .iter()
            .map(|h| {
                let texts = table.column_texts(h.index);
                let mut histogram = BTreeMap::new();
                for t in &texts {
                    let ty = crate::annotator::infer_cell_type(t);
                    if ty != CellType::Empty {
                        *histogram.entry(ty).or_insert(0usize) += 1;
                    }
                }
                let label = property_label(&h.raw_label, h.index);
                PropertyInfo {
                    column: h.index,
                    predicate: PredicateBinding::New { label: label.clone() },
                    label,
                    confirmed: false,
                    datatype: majority(&histogram),
                }
            })
            .collect::<Vec<_>>();
        let contributions = table
            .rows()
            .iter()
            .enumerate()
            .map(|(row, cells)| Contribution {
                row,
                values: cells
                    .iter()
                    .zip(&properties)
                    .map(|(cell, p)| {
                        cell.values
                            .iter()
                            .map(|v| v.trim())
                            .filter(|v| !v.is_empty())
                            .map(|v| LeafValue {
                                text: v.to_string(),
                                object: Alignment::Literal { datatype: literal_type(v, p.datatype) },
                            })
                            .collect()
                    })
                    .collect(),
            })
            .collect();
        Self::flat(table.source_id().to_string(), table.metadata().clone(), properties, contributions)
    }

    pub fn flat(
        source_id: String,
        metadata: BTreeMap<String, String>,
        properties: Vec<PropertyInfo>,
        contributions: Vec<Contribution>,
    ) -> Self {
        let schema = (0..properties.len()).map(SchemaNode::leaf).collect();
        Self { source_id, metadata, properties, schema, contributions }
    }

    pub fn labels(&self) -> Vec<String> {
        self.properties.iter().map(|p| p.label.clone()).collect()
    }

    pub fn instantiate<'a>(&'a self, contribution: &'a Contribution) -> Vec<InstanceNode<'a>> {
        instantiate_nodes(&self.schema, contribution)
    }

    pub fn validate_hierarchy(&self, spec: &HierarchySpec) -> Result<(), Vec<Violation>> {
        check_edges(spec, &self.labels()).map(|_| ())
    }

    /// Nest each child property under its parent for every contribution.
    pub fn apply_hierarchy(&self, spec: &HierarchySpec) -> Result<Self, StructureError> {
        let labels = self.labels();
        let edges = check_edges(spec, &labels).map_err(StructureError::Spec)?;
        let mut schema = self.schema.clone();
        let mut violations = Vec::new();
        for &(_, c) in &edges {
            if !schema.iter().any(|n| n.column() == Some(c)) {
                violations.push(Violation::AlreadyNested { property: labels[c].clone() });
            }
        }
        if !violations.is_empty() {
            return Err(StructureError::Spec(violations));
        }
        for &(p, c) in &edges {
            let child = detach(&mut schema, c).expect("child is top level");
            if child.contains(p) {
                return Err(StructureError::Spec(vec![Violation::Cycle {
                    properties: vec![labels[c].clone(), labels[p].clone()],
                }]));
            }
            find_mut(&mut schema, p).expect("parent present").kids_mut().push(child);
        }
        resort(&mut schema);
        Ok(Self { schema, ..self.clone() })
    }

    /// Interpose a group node over top-level member properties. The group's
    /// concept entity is reused when the store already has one.
    pub fn apply_grouping(&self, spec: &GroupSpec, store: &KgStore) -> Result<Self, StructureError> {
        let labels = self.labels();
        let group = spec.group_label.trim();
        let mut violations = Vec::new();
        if group.is_empty() {
            violations.push(Violation::EmptyGroupLabel);
        }
        let mut members = BTreeSet::new();
        for m in &spec.members {
            match resolve(&labels, m) {
                Ok(c) => {
                    if !members.insert(c) {
                        violations.push(Violation::DuplicateMember { group: group.into(), property: labels[c].clone() });
                    } else if !self.schema.iter().any(|n| n.column() == Some(c)) {
                        violations.push(Violation::AlreadyNested { property: labels[c].clone() });
                    }
                }
                Err(v) => violations.push(v),
            }
        }
        if members.len() < 2 {
            violations.push(Violation::TooFewMembers { group: group.into(), found: members.len() });
        }
        if !violations.is_empty() {
            return Err(StructureError::Spec(violations));
        }

        let mut schema = self.schema.clone();
        let mut nodes: Vec<SchemaNode> = members.iter().filter_map(|c| detach(&mut schema, *c)).collect();
        sort_nodes(&mut nodes);
        let concept = store.find_entity(group, Some(&ClassRef::new(CONCEPT_CLASS)));
        schema.push(SchemaNode::Group { label: group.to_string(), concept, members: nodes });
        sort_nodes(&mut schema);
        Ok(Self { schema, ..self.clone() })
    }
}

pub fn apply_hierarchy(spec: &HierarchySpec, model: &StructuredModel) -> Result<StructuredModel, StructureError> {
    model.apply_hierarchy(spec)
}

pub fn apply_grouping(
    spec: &GroupSpec,
    model: &StructuredModel,
    store: &KgStore,
) -> Result<StructuredModel, StructureError> {
    model.apply_grouping(spec, store)
}
