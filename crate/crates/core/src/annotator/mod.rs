//! Machine side of column type annotation (datatype voting, predicate
//! suggestion, inconsistency flags) and cell entity annotation (candidate
//! generation with enumeration splitting).
//!
//! The machine only commits score-1.0 matches. Everything fuzzy stays a
//! suggestion until a human decides.

mod lexer;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{Candidate, CandidateTarget, ClassRef, EntityId, ItemKind, KgStore, Origin, PredicateId};
use crate::table::{split_cell, Cell, ColumnHeader, Table, DEFAULT_DELIMITERS, HEADER_KEY};

pub use self::lexer::{infer_cell_type, CellType};

/// Candidates returned per predicate or cell value lookup.
pub const CANDIDATE_LIMIT: usize = 5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnnotateError {
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("cell entity annotation needs a string or url column, column {column} is {found}")]
    NotApplicable { column: usize, found: CellType },
}

impl AnnotateError {
    pub fn code(&self) -> &'static str {
        match self {
            AnnotateError::Validation(_) => "ValidationError",
            AnnotateError::NotApplicable { .. } => "ValidationError",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Unresolved,
    /// The human kept the value as-is despite the type conflict.
    Coerced,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InconsistencyFlag {
    pub row: usize,
    pub column: usize,
    pub found_type: CellType,
    pub expected_type: CellType,
    pub resolution: Resolution,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ColumnTypeInference {
    pub inferred: CellType,
    pub histogram: BTreeMap<CellType, usize>,
    pub flags: Vec<InconsistencyFlag>,
}

/// Winner of a vote histogram: highest count, ties to the more general type.
/// An empty histogram yields string.
pub fn majority(histogram: &BTreeMap<CellType, usize>) -> CellType {
    histogram
        .iter()
        .filter(|(t, n)| **t != CellType::Empty && **n > 0)
        .max_by_key(|(t, n)| (**n, t.generality()))
        .map(|(t, _)| *t)
        .unwrap_or(CellType::String)
}

/// Whether a cell lexed as `found` conflicts with a column typed `expected`.
/// Integer cells embed in decimal columns.
pub fn conflicts(found: CellType, expected: CellType) -> bool {
    found != CellType::Empty && found != expected && !(found == CellType::Integer && expected == CellType::Decimal)
}

/// Datatype a value is emitted with: the column's type when the value fits it,
/// otherwise its own lexed type (coerced cells).
pub fn literal_type(text: &str, column_type: CellType) -> CellType {
    if column_type != CellType::Empty && column_type.accepts(text) {
        column_type
    } else {
        infer_cell_type(text)
    }
}

/// Unresolved flags for every non-empty cell whose type conflicts with `expected`.
pub fn flag_cells<S: AsRef<str>>(column: usize, cells: &[S], expected: CellType) -> Vec<InconsistencyFlag> {
    cells
        .iter()
        .enumerate()
        .filter_map(|(row, text)| {
            let found = infer_cell_type(text.as_ref());
            conflicts(found, expected).then_some(InconsistencyFlag {
                row,
                column,
                found_type: found,
                expected_type: expected,
                resolution: Resolution::Unresolved,
            })
        })
        .collect()
}

/// Majority-vote datatype inference over one column's cells. Empty cells do
/// not vote.
pub fn infer_column_type<S: AsRef<str>>(column: usize, cells: &[S]) -> Result<ColumnTypeInference, AnnotateError> {
    if cells.is_empty() {
        return Err(AnnotateError::Validation("column has no cells".into()));
    }
    let mut histogram = BTreeMap::new();
    for text in cells {
        let t = infer_cell_type(text.as_ref());
        if t != CellType::Empty {
            *histogram.entry(t).or_insert(0) += 1;
        }
    }
    let inferred = majority(&histogram);
    let flags = flag_cells(column, cells, inferred);
    Ok(ColumnTypeInference { inferred, histogram, flags })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PredicateBinding {
    Existing { id: PredicateId },
    New { label: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateChoice {
    pub binding: PredicateBinding,
    pub origin: Origin,
    /// Lookup score when the choice came from the candidate list.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredicateSuggestion {
    pub candidates: Vec<Candidate>,
    /// Label for a new predicate when the store has nothing similar.
    pub create_new: Option<String>,
}

pub fn suggest_predicates(header: &ColumnHeader, store: &KgStore) -> PredicateSuggestion {
    let candidates = store.lookup_candidates(&header.normalized_label, ItemKind::Predicate, CANDIDATE_LIMIT);
    let create_new = (candidates.is_empty() && !header.normalized_label.is_empty())
        .then(|| header.normalized_label.clone());
    PredicateSuggestion { candidates, create_new }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnAnnotation {
    pub column: usize,
    pub label: String,
    pub inferred_type: CellType,
    pub vote_histogram: BTreeMap<CellType, usize>,
    /// Type in force: the machine's inferred type until a human sets another.
    pub assigned_type: CellType,
    pub type_origin: Origin,
    pub predicate_candidates: Vec<Candidate>,
    pub create_new: Option<String>,
    pub chosen_predicate: Option<PredicateChoice>,
    pub flags: Vec<InconsistencyFlag>,
}

impl ColumnAnnotation {
    pub fn unresolved_flags(&self) -> impl Iterator<Item = &InconsistencyFlag> {
        self.flags.iter().filter(|f| f.resolution == Resolution::Unresolved)
    }
}

fn annotate_column(table: &Table, column: usize, store: &KgStore, synthetic_header: bool) -> ColumnAnnotation {
    let header = &table.header()[column];
    let texts = table.column_texts(column);
    let inference = if texts.is_empty() {
        ColumnTypeInference { inferred: CellType::String, histogram: BTreeMap::new(), flags: Vec::new() }
    } else {
        infer_column_type(column, &texts).expect("non-empty column")
    };
    let suggestion = suggest_predicates(header, store);
    let chosen_predicate = if synthetic_header {
        None
    } else {
        suggestion.candidates.first().filter(|c| c.score == 1.0).and_then(|c| match c.target {
            CandidateTarget::Predicate(id) => Some(PredicateChoice {
                binding: PredicateBinding::Existing { id },
                origin: Origin::Machine,
                score: Some(c.score),
            }),
            CandidateTarget::Entity(_) => None,
        })
    };
    ColumnAnnotation {
        column,
        label: header.raw_label.clone(),
        inferred_type: inference.inferred,
        vote_histogram: inference.histogram,
        assigned_type: inference.inferred,
        type_origin: Origin::Machine,
        predicate_candidates: suggestion.candidates,
        create_new: suggestion.create_new,
        chosen_predicate,
        flags: inference.flags,
    }
}

/// One annotation per column. Predicates are auto-chosen only for score-1.0
/// candidates, and never for synthesized `column_N` headers.
pub fn annotate_table_cta(table: &Table, store: &KgStore) -> Vec<ColumnAnnotation> {
    let synthetic = table.metadata().get(HEADER_KEY).map(String::as_str) == Some("absent");
    (0..table.width()).map(|c| annotate_column(table, c, store, synthetic)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Alignment {
    Entity { id: EntityId },
    NewEntity { label: String, class_ref: Option<ClassRef> },
    /// The value is deliberately kept as a literal of the given type.
    Literal { datatype: CellType },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueAnnotation {
    pub text: String,
    pub candidates: Vec<Candidate>,
    pub alignment: Option<Alignment>,
    pub alignment_origin: Option<Origin>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellAnnotation {
    pub row: usize,
    pub column: usize,
    pub delimiter: Option<String>,
    pub values: Vec<ValueAnnotation>,
}

impl CellAnnotation {
    pub fn is_settled(&self) -> bool {
        self.values.iter().all(|v| v.alignment.is_some())
    }
}

/// Candidate entities for a cell using the default enumeration delimiters.
pub fn suggest_cell_entities(
    row: usize,
    cell: &Cell,
    column: &ColumnAnnotation,
    store: &KgStore,
) -> Result<CellAnnotation, AnnotateError> {
    suggest_cell_entities_with(row, cell, &DEFAULT_DELIMITERS, column, store)
}

/// Candidate entities per enumeration value. Only exact-normalized matches
/// (score 1.0) are pre-aligned by the machine.
pub fn suggest_cell_entities_with<S: AsRef<str>>(
    row: usize,
    cell: &Cell,
    delimiters: &[S],
    column: &ColumnAnnotation,
    store: &KgStore,
) -> Result<CellAnnotation, AnnotateError> {
    if !column.assigned_type.is_entity_capable() {
        return Err(AnnotateError::NotApplicable { column: column.column, found: column.assigned_type });
    }
    let split = split_cell(cell, delimiters);
    let values = split
        .values
        .iter()
        .map(|v| v.trim())
        .filter(|v| !v.is_empty())
        .map(|text| {
            let candidates = store.lookup_candidates(text, ItemKind::Entity, CANDIDATE_LIMIT);
            let auto = candidates.first().filter(|c| c.score == 1.0).and_then(|c| match c.target {
                CandidateTarget::Entity(id) => Some(Alignment::Entity { id }),
                CandidateTarget::Predicate(_) => None,
            });
            ValueAnnotation {
                text: text.to_string(),
                alignment_origin: auto.as_ref().map(|_| Origin::Machine),
                alignment: auto,
                candidates,
            }
        })
        .collect();
    Ok(CellAnnotation { row, column: column.column, delimiter: split.delimiter, values })
}
