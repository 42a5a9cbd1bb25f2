//! Canonical tabular model: header, rectangular rows of possibly multi-valued
//! cells, and source metadata. Columns are properties, rows are contributions.

mod csv;
mod split;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotator::{infer_cell_type, CellType};
use crate::text::normalize;

pub use self::csv::{parse_csv, table_to_csv, ParseOutcome, ParseWarning, HEADER_KEY, ORIGIN_FORMAT_KEY};
pub use self::split::{split_cell, DEFAULT_DELIMITERS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TableError {
    #[error("malformed CSV at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("input is not valid UTF-8 (first invalid byte at offset {offset})")]
    Encoding { offset: usize },
    #[error("input has zero columns")]
    EmptyInput,
    #[error("row at line {line} has {found} cells, header has {expected}")]
    RowTooLong { line: usize, expected: usize, found: usize },
    #[error("header detection needs at least 2 rows, got {found}")]
    InsufficientRows { found: usize },
    #[error("row {row} has {found} cells, expected {expected}")]
    NotRectangular { row: usize, expected: usize, found: usize },
    #[error("cell ({row}, {column}) is out of range")]
    OutOfRange { row: usize, column: usize },
}

impl TableError {
    pub fn code(&self) -> &'static str {
        match self {
            TableError::Parse { .. } => "ParseError",
            TableError::Encoding { .. } => "EncodingError",
            TableError::EmptyInput => "EmptyInputError",
            TableError::RowTooLong { .. } => "ParseError",
            TableError::InsufficientRows { .. } => "InsufficientRowsError",
            TableError::NotRectangular { .. } | TableError::OutOfRange { .. } => "ValidationError",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeaderMode {
    #[default]
    Auto,
    Present,
    Absent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvConfig {
    pub delimiter: char,
    pub quote: char,
    pub header: HeaderMode,
    /// Minimum share of typed body cells for auto-detection to report a header.
    pub header_threshold: f64,
    pub line_ending: String,
}

impl Default for CsvConfig {
    fn default() -> Self {
        Self {
            delimiter: ',',
            quote: '"',
            header: HeaderMode::Auto,
            header_threshold: 0.5,
            line_ending: "\n".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ColumnHeader {
    pub index: usize,
    pub raw_label: String,
    pub normalized_label: String,
}

impl ColumnHeader {
    pub fn new(index: usize, raw_label: impl Into<String>) -> Self {
        let raw_label = raw_label.into();
        let normalized_label = normalize(&raw_label);
        Self { index, raw_label, normalized_label }
    }
}

/// One table cell. `values` holds the enumeration parts once split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub raw_text: String,
    pub values: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delimiter: Option<String>,
}

impl Cell {
    /// Whitespace-only text counts as empty and carries no values.
    pub fn new(raw_text: impl Into<String>) -> Self {
        let raw_text = raw_text.into();
        let values = if raw_text.trim().is_empty() { Vec::new() } else { vec![raw_text.clone()] };
        Self { raw_text, values, delimiter: None }
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    source_id: String,
    header: Vec<ColumnHeader>,
    rows: Vec<Vec<Cell>>,
    metadata: BTreeMap<String, String>,
}

impl Table {
    pub fn new<S: Into<String>>(
        source_id: impl Into<String>,
        labels: impl IntoIterator<Item = S>,
        rows: Vec<Vec<Cell>>,
    ) -> Result<Self, TableError> {
        let header: Vec<ColumnHeader> =
            labels.into_iter().enumerate().map(|(i, l)| ColumnHeader::new(i, l)).collect();
        if header.is_empty() {
            return Err(TableError::EmptyInput);
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != header.len() {
                return Err(TableError::NotRectangular {
                    row: i,
                    expected: header.len(),
                    found: row.len(),
                });
            }
        }
        Ok(Self { source_id: source_id.into(), header, rows, metadata: BTreeMap::new() })
    }

    /// Convenience constructor from raw strings.
    pub fn from_strings(
        source_id: impl Into<String>,
        labels: &[&str],
        rows: &[&[&str]],
    ) -> Result<Self, TableError> {
        let rows = rows.iter().map(|r| r.iter().map(|t| Cell::new(*t)).collect()).collect();
        Self::new(source_id, labels.iter().copied(), rows)
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn set_source_id(&mut self, id: impl Into<String>) {
        self.source_id = id.into();
    }

    pub fn header(&self) -> &[ColumnHeader] {
        &self.header
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn width(&self) -> usize {
        self.header.len()
    }

    pub fn height(&self) -> usize {
        self.rows.len()
    }

    pub fn cell(&self, row: usize, column: usize) -> Option<&Cell> {
        self.rows.get(row).and_then(|r| r.get(column))
    }

    /// Raw texts of one column, top to bottom.
    pub fn column_texts(&self, column: usize) -> Vec<&str> {
        self.rows.iter().map(|r| r[column].raw_text.as_str()).collect()
    }

    pub fn set_cell(&mut self, row: usize, column: usize, cell: Cell) -> Result<(), TableError> {
        let slot = self
            .rows
            .get_mut(row)
            .and_then(|r| r.get_mut(column))
            .ok_or(TableError::OutOfRange { row, column })?;
        *slot = cell;
        Ok(())
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn metadata_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.metadata
    }

    /// Index of the column whose normalized label matches `label`, if unique.
    pub fn column_by_label(&self, label: &str) -> ColumnLookup {
        let wanted = normalize(label);
        let hits: Vec<usize> = self
            .header
            .iter()
            .filter(|h| h.normalized_label == wanted)
            .map(|h| h.index)
            .collect();
        match hits.as_slice() {
            [] => ColumnLookup::Missing,
            [one] => ColumnLookup::Found(*one),
            _ => ColumnLookup::Ambiguous(hits),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnLookup {
    Found(usize),
    Missing,
    Ambiguous(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HeaderPresence {
    Present,
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeaderVerdict {
    pub verdict: HeaderPresence,
    pub confidence: f64,
}

fn is_numeric(t: CellType) -> bool {
    matches!(t, CellType::Integer | CellType::Decimal)
}

fn is_typed(t: CellType) -> bool {
    matches!(t, CellType::Integer | CellType::Decimal | CellType::Boolean | CellType::Date)
}

/// Decide whether the first row is a header, using the default 50% threshold.
pub fn detect_header<S: AsRef<str>>(rows: &[Vec<S>]) -> Result<HeaderVerdict, TableError> {
    detect_header_with_threshold(rows, 0.5)
}

/// The first row is a header when none of its cells is numeric and at least
/// `threshold` of the non-empty body cells are numeric, boolean or date.
/// Confidence is the share of columns that agree with the verdict: for
/// `present`, columns with a non-numeric first cell; for `absent`, columns
/// that do not individually look like a header over a typed body.
pub fn detect_header_with_threshold<S: AsRef<str>>(
    rows: &[Vec<S>],
    threshold: f64,
) -> Result<HeaderVerdict, TableError> {
    if rows.len() < 2 {
        return Err(TableError::InsufficientRows { found: rows.len() });
    }
    let width = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    if width == 0 {
        return Err(TableError::EmptyInput);
    }
    let cell_type =
        |r: usize, c: usize| rows[r].get(c).map(|s| infer_cell_type(s.as_ref())).unwrap_or(CellType::Empty);

    let mut first_non_numeric = 0usize;
    let mut header_like = 0usize;
    let (mut typed_total, mut body_total) = (0usize, 0usize);
    for c in 0..width {
        let head_ok = !is_numeric(cell_type(0, c));
        if head_ok {
            first_non_numeric += 1;
        }
        let (mut typed, mut body) = (0usize, 0usize);
        for r in 1..rows.len() {
            let t = cell_type(r, c);
            if t == CellType::Empty {
                continue;
            }
            body += 1;
            if is_typed(t) {
                typed += 1;
            }
        }
        typed_total += typed;
        body_total += body;
        if head_ok && body > 0 && typed as f64 / body as f64 >= threshold {
            header_like += 1;
        }
    }
    let body_share = if body_total == 0 { 0.0 } else { typed_total as f64 / body_total as f64 };
    let present = first_non_numeric == width && body_total > 0 && body_share >= threshold;
    Ok(if present {
        HeaderVerdict { verdict: HeaderPresence::Present, confidence: first_non_numeric as f64 / width as f64 }
    } else {
        HeaderVerdict {
            verdict: HeaderPresence::Absent,
            confidence: (width - header_like) as f64 / width as f64,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(data: &[&[&str]]) -> Vec<Vec<String>> {
        data.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect()
    }

    #[test]
    fn header_present_name_age() {
        let v = detect_header(&rows(&[&["Name", "Age"], &["Ada", "36"]])).unwrap();
        assert_eq!(v.verdict, HeaderPresence::Present);
        assert_eq!(v.confidence, 1.0);
    }

    #[test]
    fn header_absent_all_numeric() {
        let v = detect_header(&rows(&[&["1", "2"], &["3", "4"]])).unwrap();
        assert_eq!(v.verdict, HeaderPresence::Absent);
        assert_eq!(v.confidence, 1.0);
    }

    #[test]
    fn header_needs_two_rows() {
        let err = detect_header(&rows(&[&["Name", "Age"]])).unwrap_err();
        assert_eq!(err, TableError::InsufficientRows { found: 1 });
        assert_eq!(err.code(), "InsufficientRowsError");
    }

    #[test]
    fn header_absent_with_partial_support() {
        // Age has one typed body cell out of two, the table as a whole 1 of 4.
        let v = detect_header(&rows(&[&["Name", "Age"], &["Ada", "Bob"], &["Eve", "36"]])).unwrap();
        assert_eq!(v.verdict, HeaderPresence::Absent);
        assert_eq!(v.confidence, 0.5);
    }

    #[test]
    fn threshold_is_overridable() {
        let data = rows(&[&["Name", "Age"], &["Ada", "Bob"], &["Eve", "36"]]);
        let v = detect_header_with_threshold(&data, 0.25).unwrap();
        assert_eq!(v.verdict, HeaderPresence::Present);
    }

    #[test]
    fn table_rejects_ragged_rows() {
        let err = Table::from_strings("t", &["a", "b"], &[&["1"]]).unwrap_err();
        assert!(matches!(err, TableError::NotRectangular { row: 0, expected: 2, found: 1 }));
    }

    #[test]
    fn column_lookup_by_label() {
        let t = Table::from_strings("t", &["City", "country", "City "], &[]).unwrap();
        assert_eq!(t.column_by_label("COUNTRY"), ColumnLookup::Found(1));
        assert_eq!(t.column_by_label("city"), ColumnLookup::Ambiguous(vec![0, 2]));
        assert_eq!(t.column_by_label("zip"), ColumnLookup::Missing);
    }

    #[test]
    fn whitespace_cell_is_empty() {
        assert!(Cell::new("   ").is_empty());
        assert_eq!(Cell::new("x").values, vec!["x"]);
    }
}
