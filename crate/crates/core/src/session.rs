//! Annotation sessions.
//!
//! The machine proposes, the human decides. Every change goes through a
//! [`Decision`] appended to the session log, and replaying that log against
//! the same table and store snapshot rebuilds the same session.
//!
//! Decision log lines are JSON objects with fields in this order:
//!
//! ```text
//! {"seq":4,"actor":"human","timestamp":"2024-05-01T10:00:00Z","kind":"set_column_type","payload":{"column":2,"cell_type":"decimal"}}
//! ```
//!
//! Lines without `seq`/`actor` are decision requests: new human decisions
//! that have not been applied yet.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::annotator::{
    annotate_table_cta, conflicts, flag_cells, infer_cell_type, infer_column_type, literal_type,
    suggest_cell_entities_with, Alignment, CellAnnotation, CellType, ColumnAnnotation, InconsistencyFlag,
    PredicateBinding, PredicateChoice, Resolution,
};
use crate::store::{Candidate, CandidateTarget, ClassRef, EntityId, KgStore, Origin, PredicateId};
use crate::structurer::{
    property_label, Contribution, GroupSpec, HierarchySpec, LeafValue, PropertyInfo, StructureError,
    StructuredModel, Violation,
};
use crate::table::{Cell, Table, DEFAULT_DELIMITERS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Imported,
    Cta,
    Cea,
    Structuring,
    Finalized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FlagResolution {
    /// Keep the value as it is.
    Coerce,
    /// Retype the column so the value no longer conflicts.
    ChangeType { cell_type: CellType },
    /// Replace the cell text with a value that fits the column.
    EditValue { text: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AlignmentTarget {
    Entity { id: EntityId },
    /// Deliberately leave the value unlinked.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Action {
    AcceptPredicate { column: usize, predicate: PredicateId },
    SetPredicate { column: usize, binding: PredicateBinding },
    SetColumnType { column: usize, cell_type: CellType },
    ResolveFlag { row: usize, column: usize, resolution: FlagResolution },
    AcceptAlignment { row: usize, column: usize, value_index: usize, entity: EntityId },
    SetAlignment { row: usize, column: usize, value_index: usize, target: AlignmentTarget },
    CreateEntityAndAlign {
        row: usize,
        column: usize,
        value_index: usize,
        label: String,
        #[serde(default)]
        class_ref: Option<ClassRef>,
    },
    /// Split with these delimiters in priority order; an empty list keeps the cell whole.
    SplitCell { row: usize, column: usize, delimiters: Vec<String> },
    DefineHierarchy { spec: HierarchySpec },
    DefineGroup { spec: GroupSpec },
}

impl Action {
    pub fn phase(&self) -> Phase {
        match self {
            Action::AcceptPredicate { .. }
            | Action::SetPredicate { .. }
            | Action::SetColumnType { .. }
            | Action::ResolveFlag { .. } => Phase::Cta,
            Action::AcceptAlignment { .. }
            | Action::SetAlignment { .. }
            | Action::CreateEntityAndAlign { .. }
            | Action::SplitCell { .. } => Phase::Cea,
            Action::DefineHierarchy { .. } | Action::DefineGroup { .. } => Phase::Structuring,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub seq: u64,
    pub actor: Origin,
    pub timestamp: String,
    #[serde(flatten)]
    pub action: Action,
}

/// A human decision submitted for application.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRequest {
    #[serde(flatten)]
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl DecisionRequest {
    pub fn new(action: Action) -> Self {
        Self { action, timestamp: None }
    }

    pub fn at(action: Action, timestamp: impl Into<String>) -> Self {
        Self { action, timestamp: Some(timestamp.into()) }
    }
}

/// One line of a decision log file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogLine {
    Recorded(Decision),
    Request(DecisionRequest),
}

pub fn parse_log(text: &str) -> Result<Vec<LogLine>, SessionError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| SessionError::Validation(format!("decision log line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn write_log(decisions: &[Decision]) -> String {
    decisions
        .iter()
        .map(|d| serde_json::to_string(d).expect("decisions serialize") + "\n")
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct CellRef {
    pub row: usize,
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UnalignedValue {
    pub row: usize,
    pub column: usize,
    pub value_index: usize,
    pub text: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("{0}")]
    Phase(String),
    #[error("{message}")]
    Integrity { message: String, violations: Vec<Violation> },
    #[error("{0}")]
    Validation(String),
    #[error("finalization blocked: {} unresolved flag(s), {} unaligned value(s)", flags.len(), unaligned.len())]
    FinalizeBlocked { flags: Vec<CellRef>, unaligned: Vec<UnalignedValue> },
    #[error("replay failed at seq {seq}: {message}")]
    Replay { seq: u64, message: String },
}

impl SessionError {
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::Phase(_) => "PhaseError",
            SessionError::Integrity { .. } => "IntegrityError",
            SessionError::Validation(_) => "ValidationError",
            SessionError::FinalizeBlocked { .. } => "FinalizeBlockedError",
            SessionError::Replay { .. } => "ReplayError",
        }
    }

    pub fn details(&self) -> serde_json::Value {
        match self {
            SessionError::Integrity { violations, .. } if !violations.is_empty() => json!({ "violations": violations }),
            SessionError::FinalizeBlocked { flags, unaligned } => json!({ "flags": flags, "unaligned": unaligned }),
            SessionError::Replay { seq, .. } => json!({ "seq": seq }),
            _ => serde_json::Value::Null,
        }
    }

    fn integrity(message: impl Into<String>) -> Self {
        SessionError::Integrity { message: message.into(), violations: Vec::new() }
    }
}

impl From<StructureError> for SessionError {
    fn from(e: StructureError) -> Self {
        SessionError::Integrity { message: e.to_string(), violations: e.violations().to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "spec", rename_all = "snake_case")]
pub enum StructureStep {
    Hierarchy(HierarchySpec),
    Group(GroupSpec),
}

/// What a successful decision changed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Applied {
    pub decisions: Vec<Decision>,
    pub phase: Phase,
    pub columns: Vec<ColumnAnnotation>,
    pub cells: Vec<CellAnnotation>,
    pub removed_cells: Vec<CellRef>,
    pub structure_changed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PendingPredicate {
    pub column: usize,
    pub label: String,
    pub candidates: Vec<Candidate>,
    pub create_new: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PendingAlignment {
    pub row: usize,
    pub column: usize,
    pub value_index: usize,
    pub text: String,
    pub candidates: Vec<Candidate>,
}

/// Everything still waiting on a human.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pending {
    pub predicates: Vec<PendingPredicate>,
    pub flags: Vec<InconsistencyFlag>,
    pub alignments: Vec<PendingAlignment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    id: String,
    source: Table,
    table: Table,
    store: Arc<KgStore>,
    opened_at: String,
    phase: Phase,
    columns: Vec<ColumnAnnotation>,
    cells: BTreeMap<(usize, usize), CellAnnotation>,
    split_overrides: BTreeMap<(usize, usize), Vec<String>>,
    coerced: BTreeSet<(usize, usize)>,
    structure: Vec<StructureStep>,
    log: Vec<Decision>,
}

#[derive(Serialize)]
pub struct SessionView<'a> {
    pub id: &'a str,
    pub phase: Phase,
    pub opened_at: &'a str,
    pub table: &'a Table,
    pub columns: &'a [ColumnAnnotation],
    pub cells: Vec<&'a CellAnnotation>,
    pub split_overrides: Vec<serde_json::Value>,
    pub structure: &'a [StructureStep],
    pub decisions: &'a [Decision],
}

impl Session {
    /// Open a session: machine column annotation runs immediately, and every
    /// machine choice is logged.
    pub fn open(
        id: impl Into<String>,
        table: Table,
        store: Arc<KgStore>,
        opened_at: impl Into<String>,
    ) -> Result<Self, SessionError> {
        let columns = annotate_table_cta(&table, &store);
        let mut session = Session {
            id: id.into(),
            source: table.clone(),
            table,
            store,
            opened_at: opened_at.into(),
            phase: Phase::Imported,
            columns,
            cells: BTreeMap::new(),
            split_overrides: BTreeMap::new(),
            coerced: BTreeSet::new(),
            structure: Vec::new(),
            log: Vec::new(),
        };
        let at = session.opened_at.clone();
        for c in 0..session.columns.len() {
            let cell_type = session.columns[c].assigned_type;
            session.push(Origin::Machine, &at, Action::SetColumnType { column: c, cell_type });
            if let Some(PredicateChoice { binding: PredicateBinding::Existing { id }, .. }) =
                &session.columns[c].chosen_predicate
            {
                let predicate = *id;
                session.push(Origin::Machine, &at, Action::AcceptPredicate { column: c, predicate });
            }
        }
        let mut follow_ups = Vec::new();
        for c in 0..session.columns.len() {
            session.sync_column(c, &mut follow_ups);
        }
        for action in follow_ups {
            session.push(Origin::Machine, &at, action);
        }
        session.phase = Phase::Cta;
        Ok(session)
    }

    /// Rebuild a session from its table, store snapshot and decision log.
    pub fn replay(
        id: impl Into<String>,
        table: Table,
        store: Arc<KgStore>,
        opened_at: impl Into<String>,
        log: &[Decision],
    ) -> Result<Self, SessionError> {
        for (i, d) in log.iter().enumerate() {
            if d.seq != i as u64 + 1 {
                return Err(SessionError::Replay {
                    seq: d.seq,
                    message: format!("expected seq {}, found {}", i + 1, d.seq),
                });
            }
        }
        let mut session = Self::open(id, table, store, opened_at)?;
        let lines: Vec<LogLine> = log.iter().cloned().map(LogLine::Recorded).collect();
        session.apply_log(&lines)?;
        Ok(session)
    }

    /// Apply a decision log on top of the current state. Recorded entries
    /// already in the log must match it exactly; a recorded human entry with
    /// the next seq is applied, as is every request line. All or nothing.
    pub fn apply_log(&mut self, lines: &[LogLine]) -> Result<Vec<Decision>, SessionError> {
        let mut next = self.clone();
        let start = next.log.len();
        for line in lines {
            match line {
                LogLine::Request(req) => {
                    let seq = next.log.len() as u64 + 1;
                    next.apply(req.clone()).map_err(|e| SessionError::Replay { seq, message: e.to_string() })?;
                }
                LogLine::Recorded(d) => {
                    let len = next.log.len() as u64;
                    if d.seq == 0 || d.seq > len + 1 {
                        return Err(SessionError::Replay {
                            seq: d.seq,
                            message: format!("seq gap: log has {len} decisions"),
                        });
                    }
                    if d.seq <= len {
                        if next.log[d.seq as usize - 1] != *d {
                            return Err(SessionError::Replay {
                                seq: d.seq,
                                message: "decision differs from the regenerated one".into(),
                            });
                        }
                        continue;
                    }
                    if d.actor != Origin::Human {
                        return Err(SessionError::Replay {
                            seq: d.seq,
                            message: "machine decision not reproduced".into(),
                        });
                    }
                    next.apply(DecisionRequest::at(d.action.clone(), d.timestamp.clone()))
                        .map_err(|e| SessionError::Replay { seq: d.seq, message: e.to_string() })?;
                }
            }
        }
        let added = next.log[start..].to_vec();
        *self = next;
        Ok(added)
    }

    /// Apply one human decision atomically. On error the session is unchanged.
    pub fn apply(&mut self, request: DecisionRequest) -> Result<Applied, SessionError> {
        if self.phase == Phase::Finalized {
            return Err(SessionError::Phase("session is finalized".into()));
        }
        let mut next = self.clone();
        let timestamp = request
            .timestamp
            .clone()
            .or_else(|| self.log.last().map(|d| d.timestamp.clone()))
            .unwrap_or_else(|| self.opened_at.clone());
        let start = next.log.len();
        let mut follow_ups = Vec::new();
        next.execute(&request.action, &mut follow_ups)?;
        next.phase = next.phase.max(request.action.phase());
        next.push(Origin::Human, &timestamp, request.action);
        for action in follow_ups {
            next.push(Origin::Machine, &timestamp, action);
        }
        let applied = next.diff(self, start);
        *self = next;
        Ok(applied)
    }

    fn diff(&self, before: &Session, start: usize) -> Applied {
        let columns = self
            .columns
            .iter()
            .zip(&before.columns)
            .filter(|(a, b)| a != b)
            .map(|(a, _)| a.clone())
            .collect();
        let cells = self
            .cells
            .iter()
            .filter(|(k, v)| before.cells.get(k) != Some(v))
            .map(|(_, v)| v.clone())
            .collect();
        let removed_cells = before
            .cells
            .keys()
            .filter(|k| !self.cells.contains_key(k))
            .map(|&(row, column)| CellRef { row, column })
            .collect();
        Applied {
            decisions: self.log[start..].to_vec(),
            phase: self.phase,
            columns,
            cells,
            removed_cells,
            structure_changed: self.structure != before.structure,
        }
    }

    fn push(&mut self, actor: Origin, timestamp: &str, action: Action) {
        let seq = self.log.len() as u64 + 1;
        self.log.push(Decision { seq, actor, timestamp: timestamp.to_string(), action });
    }

    fn check_column(&self, column: usize) -> Result<(), SessionError> {
        if column < self.columns.len() {
            Ok(())
        } else {
            Err(SessionError::integrity(format!("unknown column {column}")))
        }
    }

    fn value_slot(&self, row: usize, column: usize, value_index: usize) -> Result<(), SessionError> {
        let ann = self
            .cells
            .get(&(row, column))
            .ok_or_else(|| SessionError::integrity(format!("no entity annotation for cell ({row}, {column})")))?;
        if value_index >= ann.values.len() {
            return Err(SessionError::integrity(format!(
                "cell ({row}, {column}) has {} value(s), no index {value_index}",
                ann.values.len()
            )));
        }
        Ok(())
    }

    fn set_value(&mut self, row: usize, column: usize, value_index: usize, alignment: Alignment) {
        let value = &mut self.cells.get_mut(&(row, column)).expect("checked").values[value_index];
        value.alignment = Some(alignment);
        value.alignment_origin = Some(Origin::Human);
    }

    fn execute(&mut self, action: &Action, follow_ups: &mut Vec<Action>) -> Result<(), SessionError> {
        match action {
            Action::AcceptPredicate { column, predicate } => {
                self.check_column(*column)?;
                let ann = &mut self.columns[*column];
                let hit = ann
                    .predicate_candidates
                    .iter()
                    .find(|c| c.target == CandidateTarget::Predicate(*predicate))
                    .ok_or_else(|| {
                        SessionError::integrity(format!("{predicate} is not a candidate for column {column}"))
                    })?;
                ann.chosen_predicate = Some(PredicateChoice {
                    binding: PredicateBinding::Existing { id: *predicate },
                    origin: Origin::Human,
                    score: Some(hit.score),
                });
            }
            Action::SetPredicate { column, binding } => {
                self.check_column(*column)?;
                let score = match binding {
                    PredicateBinding::Existing { id } => {
                        if self.store.predicate(*id).is_none() {
                            return Err(SessionError::integrity(format!("unknown predicate {id}")));
                        }
                        self.columns[*column]
                            .predicate_candidates
                            .iter()
                            .find(|c| c.target == CandidateTarget::Predicate(*id))
                            .map(|c| c.score)
                    }
                    PredicateBinding::New { label } => {
                        if label.trim().is_empty() {
                            return Err(SessionError::Validation("predicate label must not be empty".into()));
                        }
                        None
                    }
                };
                let binding = match binding {
                    PredicateBinding::New { label } => PredicateBinding::New { label: label.trim().to_string() },
                    other => other.clone(),
                };
                self.columns[*column].chosen_predicate = Some(PredicateChoice { binding, origin: Origin::Human, score });
            }
            Action::SetColumnType { column, cell_type } => {
                self.check_column(*column)?;
                self.set_type(*column, *cell_type, follow_ups)?;
            }
            Action::ResolveFlag { row, column, resolution } => {
                self.check_column(*column)?;
                let open = self.columns[*column]
                    .flags
                    .iter()
                    .any(|f| f.row == *row && f.resolution == Resolution::Unresolved);
                if !open {
                    return Err(SessionError::integrity(format!("no open flag at ({row}, {column})")));
                }
                match resolution {
                    FlagResolution::Coerce => {
                        self.coerced.insert((*row, *column));
                        self.refresh_flags(*column);
                    }
                    FlagResolution::ChangeType { cell_type } => {
                        self.set_type(*column, *cell_type, follow_ups)?;
                        if self.columns[*column].flags.iter().any(|f| f.row == *row) {
                            return Err(SessionError::Validation(format!(
                                "cell ({row}, {column}) still conflicts with type {cell_type}"
                            )));
                        }
                    }
                    FlagResolution::EditValue { text } => {
                        let expected = self.columns[*column].assigned_type;
                        let found = infer_cell_type(text);
                        if conflicts(found, expected) {
                            return Err(SessionError::Validation(format!(
                                "{text:?} is {found}, column {column} expects {expected}"
                            )));
                        }
                        self.table
                            .set_cell(*row, *column, Cell::new(text.clone()))
                            .map_err(|e| SessionError::integrity(e.to_string()))?;
                        self.split_overrides.remove(&(*row, *column));
                        self.revote(*column);
                        self.refresh_cell(*row, *column, follow_ups);
                    }
                }
            }
            Action::AcceptAlignment { row, column, value_index, entity } => {
                self.value_slot(*row, *column, *value_index)?;
                let value = &self.cells[&(*row, *column)].values[*value_index];
                if !value.candidates.iter().any(|c| c.target == CandidateTarget::Entity(*entity)) {
                    return Err(SessionError::integrity(format!("{entity} is not a candidate for {:?}", value.text)));
                }
                self.set_value(*row, *column, *value_index, Alignment::Entity { id: *entity });
            }
            Action::SetAlignment { row, column, value_index, target } => {
                self.value_slot(*row, *column, *value_index)?;
                let alignment = match target {
                    AlignmentTarget::Entity { id } => {
                        if self.store.entity(*id).is_none() {
                            return Err(SessionError::integrity(format!("unknown entity {id}")));
                        }
                        Alignment::Entity { id: *id }
                    }
                    AlignmentTarget::Literal => {
                        let text = &self.cells[&(*row, *column)].values[*value_index].text;
                        Alignment::Literal { datatype: literal_type(text, self.columns[*column].assigned_type) }
                    }
                };
                self.set_value(*row, *column, *value_index, alignment);
            }
            Action::CreateEntityAndAlign { row, column, value_index, label, class_ref } => {
                self.value_slot(*row, *column, *value_index)?;
                if label.trim().is_empty() {
                    return Err(SessionError::Validation("entity label must not be empty".into()));
                }
                let alignment = Alignment::NewEntity { label: label.trim().to_string(), class_ref: class_ref.clone() };
                self.set_value(*row, *column, *value_index, alignment);
            }
            Action::SplitCell { row, column, delimiters } => {
                if !self.cells.contains_key(&(*row, *column)) {
                    return Err(SessionError::integrity(format!("no entity annotation for cell ({row}, {column})")));
                }
                if delimiters.iter().any(String::is_empty) {
                    return Err(SessionError::Validation("delimiters must not be empty strings".into()));
                }
                self.split_overrides.insert((*row, *column), delimiters.clone());
                self.refresh_cell(*row, *column, follow_ups);
            }
            Action::DefineHierarchy { spec } => {
                let model = self.structured()?;
                model.apply_hierarchy(spec)?;
                self.structure.push(StructureStep::Hierarchy(spec.clone()));
            }
            Action::DefineGroup { spec } => {
                let model = self.structured()?;
                model.apply_grouping(spec, &self.store)?;
                self.structure.push(StructureStep::Group(spec.clone()));
            }
        }
        Ok(())
    }

    fn set_type(&mut self, column: usize, cell_type: CellType, follow_ups: &mut Vec<Action>) -> Result<(), SessionError> {
        if cell_type == CellType::Empty {
            return Err(SessionError::Validation("empty is not a column type".into()));
        }
        let ann = &mut self.columns[column];
        ann.assigned_type = cell_type;
        ann.type_origin = Origin::Human;
        self.coerced.retain(|(_, c)| *c != column);
        self.refresh_flags(column);
        self.sync_column(column, follow_ups);
        Ok(())
    }

    /// Recount the vote after a value edit; the assigned type stays.
    fn revote(&mut self, column: usize) {
        let texts = self.table.column_texts(column);
        if let Ok(inf) = infer_column_type(column, &texts) {
            let ann = &mut self.columns[column];
            ann.inferred_type = inf.inferred;
            ann.vote_histogram = inf.histogram;
        }
        self.refresh_flags(column);
    }

    fn refresh_flags(&mut self, column: usize) {
        let expected = self.columns[column].assigned_type;
        let mut flags = flag_cells(column, &self.table.column_texts(column), expected);
        self.coerced.retain(|&(r, c)| c != column || flags.iter().any(|f| f.row == r));
        for f in &mut flags {
            if self.coerced.contains(&(f.row, column)) {
                f.resolution = Resolution::Coerced;
            }
        }
        self.columns[column].flags = flags;
    }

    /// Add or drop cell annotations after the column's entity capability changed.
    fn sync_column(&mut self, column: usize, follow_ups: &mut Vec<Action>) {
        let capable = self.columns[column].assigned_type.is_entity_capable();
        for row in 0..self.table.height() {
            let has = self.cells.contains_key(&(row, column));
            if capable != has {
                self.refresh_cell(row, column, follow_ups);
            }
        }
    }

    /// Recompute one cell's candidates from scratch. Exact matches become
    /// machine alignments, logged as follow-up decisions.
    fn refresh_cell(&mut self, row: usize, column: usize, follow_ups: &mut Vec<Action>) {
        let ann = &self.columns[column];
        let cell = &self.table.rows()[row][column];
        if !ann.assigned_type.is_entity_capable() || cell.is_empty() {
            self.cells.remove(&(row, column));
            return;
        }
        let delimiters: Vec<String> = match self.split_overrides.get(&(row, column)) {
            Some(d) => d.clone(),
            None => DEFAULT_DELIMITERS.iter().map(|d| d.to_string()).collect(),
        };
        let fresh = suggest_cell_entities_with(row, cell, &delimiters, ann, &self.store).expect("entity-capable column");
        for (value_index, v) in fresh.values.iter().enumerate() {
            if let Some(Alignment::Entity { id }) = v.alignment {
                follow_ups.push(Action::AcceptAlignment { row, column, value_index, entity: id });
            }
        }
        self.cells.insert((row, column), fresh);
    }

    /// Current annotations as a structured model, unaligned values as literals.
    fn structured(&self) -> Result<StructuredModel, SessionError> {
        let properties = self
            .columns
            .iter()
            .map(|c| {
                let label = property_label(&c.label, c.column);
                let (predicate, confirmed) = match &c.chosen_predicate {
                    Some(choice) => (choice.binding.clone(), true),
                    None => (PredicateBinding::New { label: label.clone() }, false),
                };
                PropertyInfo { column: c.column, label, predicate, confirmed, datatype: c.assigned_type }
            })
            .collect::<Vec<_>>();
        let contributions = (0..self.table.height())
            .map(|row| Contribution {
                row,
                values: (0..self.columns.len()).map(|col| self.leaf_values(row, col)).collect(),
            })
            .collect();
        let mut model = StructuredModel::flat(
            self.table.source_id().to_string(),
            self.table.metadata().clone(),
            properties,
            contributions,
        );
        for step in &self.structure {
            model = match step {
                StructureStep::Hierarchy(spec) => model.apply_hierarchy(spec)?,
                StructureStep::Group(spec) => model.apply_grouping(spec, &self.store)?,
            };
        }
        Ok(model)
    }

    fn leaf_values(&self, row: usize, column: usize) -> Vec<LeafValue> {
        let assigned = self.columns[column].assigned_type;
        if let Some(ann) = self.cells.get(&(row, column)) {
            return ann
                .values
                .iter()
                .map(|v| LeafValue {
                    text: v.text.clone(),
                    object: v
                        .alignment
                        .clone()
                        .unwrap_or(Alignment::Literal { datatype: literal_type(&v.text, assigned) }),
                })
                .collect();
        }
        self.table.rows()[row][column]
            .values
            .iter()
            .map(|v| v.trim())
            .filter(|v| !v.is_empty())
            .map(|v| LeafValue { text: v.to_string(), object: Alignment::Literal { datatype: literal_type(v, assigned) } })
            .collect()
    }

    fn blockers(&self) -> (Vec<CellRef>, Vec<UnalignedValue>) {
        let flags = self
            .columns
            .iter()
            .flat_map(|c| c.unresolved_flags())
            .map(|f| CellRef { row: f.row, column: f.column })
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let unaligned = self
            .cells
            .values()
            .flat_map(|cell| {
                cell.values.iter().enumerate().filter(|(_, v)| v.alignment.is_none()).map(|(i, v)| UnalignedValue {
                    row: cell.row,
                    column: cell.column,
                    value_index: i,
                    text: v.text.clone(),
                })
            })
            .collect();
        (flags, unaligned)
    }

    /// Close the session and emit the annotated model. Blocked while any flag
    /// is unresolved or any entity-capable value is neither aligned nor
    /// confirmed as a literal.
    pub fn finalize(&mut self) -> Result<StructuredModel, SessionError> {
        if self.phase == Phase::Finalized {
            return Err(SessionError::Phase("session is already finalized".into()));
        }
        let (flags, unaligned) = self.blockers();
        if !flags.is_empty() || !unaligned.is_empty() {
            return Err(SessionError::FinalizeBlocked { flags, unaligned });
        }
        let model = self.structured()?;
        self.phase = Phase::Finalized;
        Ok(model)
    }

    /// The annotated model of a finalized session.
    pub fn model(&self) -> Result<StructuredModel, SessionError> {
        if self.phase != Phase::Finalized {
            return Err(SessionError::Phase("session is not finalized".into()));
        }
        self.structured()
    }

    /// Preview of the structured model before finalization.
    pub fn preview(&self) -> Result<StructuredModel, SessionError> {
        self.structured()
    }

    pub fn pending(&self) -> Pending {
        let predicates = self
            .columns
            .iter()
            .filter(|c| c.chosen_predicate.is_none())
            .map(|c| PendingPredicate {
                column: c.column,
                label: c.label.clone(),
                candidates: c.predicate_candidates.clone(),
                create_new: c.create_new.clone(),
            })
            .collect();
        let flags = self.columns.iter().flat_map(|c| c.unresolved_flags().cloned()).collect();
        let alignments = self
            .cells
            .values()
            .flat_map(|cell| {
                cell.values.iter().enumerate().filter(|(_, v)| v.alignment.is_none()).map(|(i, v)| PendingAlignment {
                    row: cell.row,
                    column: cell.column,
                    value_index: i,
                    text: v.text.clone(),
                    candidates: v.candidates.clone(),
                })
            })
            .collect();
        Pending { predicates, flags, alignments }
    }

    /// Entity candidates for one cell.
    pub fn candidates(&self, row: usize, column: usize) -> Result<CellAnnotation, SessionError> {
        self.check_column(column)?;
        if row >= self.table.height() {
            return Err(SessionError::integrity(format!("unknown row {row}")));
        }
        if let Some(ann) = self.cells.get(&(row, column)) {
            return Ok(ann.clone());
        }
        let ann = &self.columns[column];
        if !ann.assigned_type.is_entity_capable() {
            return Err(SessionError::Validation(format!(
                "column {column} is typed {}, entity candidates need string or url",
                ann.assigned_type
            )));
        }
        Ok(CellAnnotation { row, column, delimiter: None, values: Vec::new() })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn is_finalized(&self) -> bool {
        self.phase == Phase::Finalized
    }

    pub fn opened_at(&self) -> &str {
        &self.opened_at
    }

    /// The table as imported, before any value edits.
    pub fn source_table(&self) -> &Table {
        &self.source
    }

    pub fn table(&self) -> &Table {
        &self.table
    }

    pub fn store(&self) -> &Arc<KgStore> {
        &self.store
    }

    pub fn columns(&self) -> &[ColumnAnnotation] {
        &self.columns
    }

    pub fn cell_annotation(&self, row: usize, column: usize) -> Option<&CellAnnotation> {
        self.cells.get(&(row, column))
    }

    pub fn cell_annotations(&self) -> impl Iterator<Item = &CellAnnotation> {
        self.cells.values()
    }

    pub fn structure(&self) -> &[StructureStep] {
        &self.structure
    }

    pub fn log(&self) -> &[Decision] {
        &self.log
    }

    pub fn view(&self) -> SessionView<'_> {
        SessionView {
            id: &self.id,
            phase: self.phase,
            opened_at: &self.opened_at,
            table: &self.table,
            columns: &self.columns,
            cells: self.cells.values().collect(),
            split_overrides: self
                .split_overrides
                .iter()
                .map(|((row, column), d)| json!({ "row": row, "column": column, "delimiters": d }))
                .collect(),
            structure: &self.structure,
            decisions: &self.log,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structurer::HierarchyEdge;

    const T0: &str = "2024-01-01T00:00:00Z";

    fn store() -> Arc<KgStore> {
        let mut s = KgStore::new();
        s.upsert_predicate("country", None).unwrap();
        s.upsert_predicate("score", None).unwrap();
        s.upsert_entity("Germany", None, Origin::Human).unwrap();
        s.upsert_entity("France", None, Origin::Human).unwrap();
        s.upsert_entity("Frankreich", None, Origin::Human).unwrap();
        Arc::new(s)
    }

    fn table() -> Table {
        Table::from_strings(
            "t",
            &["country", "score", "note"],
            &[&["Germany", "1", "a"], &["Frances", "2.5", "b"], &["France; Germany", "3", ""]],
        )
        .unwrap()
    }

    fn open() -> Session {
        Session::open("s1", table(), store(), T0).unwrap()
    }

    fn req(action: Action) -> DecisionRequest {
        DecisionRequest::at(action, "2024-01-01T00:01:00Z")
    }

    #[test]
    fn open_logs_machine_choices() {
        let s = open();
        assert_eq!(s.phase(), Phase::Cta);
        assert_eq!(s.columns().len(), 3);
        let kinds: Vec<_> = s.log().iter().map(|d| (d.seq, d.actor, d.action.phase())).collect();
        assert!(kinds.iter().all(|(_, a, _)| *a == Origin::Machine));
        assert_eq!(kinds.iter().map(|k| k.0).collect::<Vec<_>>(), (1..=kinds.len() as u64).collect::<Vec<_>>());
        // 3 column types, 2 exact predicates, Germany in row 0 and France + Germany in row 2
        assert_eq!(s.log().len(), 3 + 2 + 3);
        assert!(s.log().iter().all(|d| d.timestamp == T0));
    }

    #[test]
    fn flag_on_decimal_in_integer_column() {
        let s = open();
        let flags: Vec<_> = s.columns()[1].flags.iter().map(|f| (f.row, f.found_type)).collect();
        assert_eq!(flags, [(1, CellType::Decimal)]);
    }

    #[test]
    fn change_type_resolves_flag() {
        let mut s = open();
        let applied = s
            .apply(req(Action::ResolveFlag {
                row: 1,
                column: 1,
                resolution: FlagResolution::ChangeType { cell_type: CellType::Decimal },
            }))
            .unwrap();
        assert!(s.columns()[1].flags.is_empty());
        assert_eq!(s.columns()[1].assigned_type, CellType::Decimal);
        assert_eq!(applied.columns.len(), 1);
        assert_eq!(applied.decisions.len(), 1);
    }

    #[test]
    fn change_type_that_keeps_conflict_is_rejected() {
        let mut s = open();
        let before = s.clone();
        let err = s
            .apply(req(Action::ResolveFlag {
                row: 1,
                column: 1,
                resolution: FlagResolution::ChangeType { cell_type: CellType::Boolean },
            }))
            .unwrap_err();
        assert_eq!(err.code(), "ValidationError");
        assert_eq!(s, before);
    }

    #[test]
    fn coerce_and_edit() {
        let mut s = open();
        s.apply(req(Action::ResolveFlag { row: 1, column: 1, resolution: FlagResolution::Coerce })).unwrap();
        assert_eq!(s.columns()[1].flags[0].resolution, Resolution::Coerced);
        assert_eq!(s.pending().flags.len(), 0);

        let mut s = open();
        let err = s
            .apply(req(Action::ResolveFlag {
                row: 1,
                column: 1,
                resolution: FlagResolution::EditValue { text: "x".into() },
            }))
            .unwrap_err();
        assert_eq!(err.code(), "ValidationError");
        s.apply(req(Action::ResolveFlag { row: 1, column: 1, resolution: FlagResolution::EditValue { text: "2".into() } }))
            .unwrap();
        assert!(s.columns()[1].flags.is_empty());
        assert_eq!(s.table().cell(1, 1).unwrap().raw_text, "2");
        assert_eq!(s.source_table().cell(1, 1).unwrap().raw_text, "2.5");
    }

    #[test]
    fn alignment_decisions() {
        let mut s = open();
        let cands = &s.cell_annotation(1, 0).unwrap().values[0].candidates;
        let france = match cands[0].target {
            CandidateTarget::Entity(id) => id,
            _ => unreachable!(),
        };
        assert!(cands[0].score < 1.0);
        s.apply(req(Action::AcceptAlignment { row: 1, column: 0, value_index: 0, entity: france })).unwrap();
        assert_eq!(s.phase(), Phase::Cea);
        let v = &s.cell_annotation(1, 0).unwrap().values[0];
        assert_eq!(v.alignment, Some(Alignment::Entity { id: france }));
        assert_eq!(v.alignment_origin, Some(Origin::Human));

        let err = s.apply(req(Action::AcceptAlignment { row: 1, column: 0, value_index: 0, entity: EntityId(99) }));
        assert_eq!(err.unwrap_err().code(), "IntegrityError");
        let err = s.apply(req(Action::SetAlignment {
            row: 0,
            column: 1,
            value_index: 0,
            target: AlignmentTarget::Literal,
        }));
        assert_eq!(err.unwrap_err().code(), "IntegrityError");
    }

    #[test]
    fn split_override_and_machine_follow_up() {
        let mut s = open();
        let applied = s.apply(req(Action::SplitCell { row: 2, column: 0, delimiters: vec![] })).unwrap();
        assert_eq!(s.cell_annotation(2, 0).unwrap().values.len(), 1);
        assert_eq!(applied.cells.len(), 1);
        assert!(applied.decisions.iter().skip(1).all(|d| d.actor == Origin::Machine));
        let applied = s.apply(req(Action::SplitCell { row: 2, column: 0, delimiters: vec![";".into()] })).unwrap();
        assert_eq!(s.cell_annotation(2, 0).unwrap().values.len(), 2);
        assert_eq!(applied.decisions.len(), 3);
    }

    #[test]
    fn cyclic_hierarchy_is_integrity_error() {
        let mut s = open();
        let spec = HierarchySpec {
            edges: vec![HierarchyEdge::new("country", "note"), HierarchyEdge::new("note", "country")],
        };
        let err = s.apply(req(Action::DefineHierarchy { spec })).unwrap_err();
        assert_eq!(err.code(), "IntegrityError");
        assert!(matches!(&err, SessionError::Integrity { violations, .. } if !violations.is_empty()));
        assert!(s.structure().is_empty());
    }

    fn finish(s: &mut Session) {
        s.apply(req(Action::ResolveFlag { row: 1, column: 1, resolution: FlagResolution::Coerce })).unwrap();
        for p in s.pending().alignments {
            s.apply(req(Action::SetAlignment {
                row: p.row,
                column: p.column,
                value_index: p.value_index,
                target: AlignmentTarget::Literal,
            }))
            .unwrap();
        }
    }

    #[test]
    fn finalize_blocked_then_ok() {
        let mut s = open();
        match s.finalize().unwrap_err() {
            SessionError::FinalizeBlocked { flags, unaligned } => {
                assert_eq!(flags, [CellRef { row: 1, column: 1 }]);
                assert!(!unaligned.is_empty());
            }
            other => panic!("{other:?}"),
        }
        finish(&mut s);
        let model = s.finalize().unwrap();
        assert_eq!(model.contributions.len(), 3);
        assert!(!model.properties[2].confirmed);
        assert_eq!(s.apply(req(Action::SplitCell { row: 0, column: 0, delimiters: vec![] })).unwrap_err().code(), "PhaseError");
    }

    #[test]
    fn replay_reproduces_state() {
        let mut s = open();
        finish(&mut s);
        s.apply(req(Action::SetColumnType { column: 2, cell_type: CellType::Integer })).unwrap();
        let back = Session::replay("s1", table(), store(), T0, s.log()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn replay_errors() {
        let s = open();
        let mut log = s.log().to_vec();
        log.remove(1);
        match Session::replay("s1", table(), store(), T0, &log).unwrap_err() {
            SessionError::Replay { seq, .. } => assert_eq!(seq, 3),
            other => panic!("{other:?}"),
        }
        let empty = Session::replay("s1", table(), store(), T0, &[]).unwrap();
        assert_eq!(empty, open());
        let err = Session::replay("s1", table(), Arc::new(KgStore::new()), T0, s.log()).unwrap_err();
        assert_eq!(err.code(), "ReplayError");
    }

    #[test]
    fn log_lines_round_trip() {
        let s = open();
        let text = write_log(s.log());
        assert!(text.starts_with("{\"seq\":1,\"actor\":\"machine\",\"timestamp\":"));
        let lines = parse_log(&text).unwrap();
        assert!(lines.iter().all(|l| matches!(l, LogLine::Recorded(_))));
        let req_line = r#"{"kind":"set_column_type","payload":{"column":2,"cell_type":"string"}}"#;
        assert!(matches!(parse_log(req_line).unwrap()[0], LogLine::Request(_)));
    }
}
