//! N-Triples rendering and parsing for store statements.
//!
//! Entities render as `<{base}resource/E{n}>`, predicates as
//! `<{base}predicate/P{n}>`. Literals are typed:
//!
//! | cell type | datatype |
//! |-----------|----------|
//! | string    | `xsd:string` |
//! | integer   | `xsd:integer` |
//! | decimal   | `xsd:decimal` |
//! | boolean   | `xsd:boolean` |
//! | date `YYYY-MM-DD` | `xsd:date` |
//! | date `YYYY` | `xsd:gYear` |
//! | url       | `xsd:anyURI` |
//!
//! Lines are sorted by subject, then predicate, then object, each compared as
//! rendered text, and every line ends with ` .` and a newline.

use crate::annotator::CellType;
use crate::store::{EntityId, KgStore, Literal, Object, PredicateId, Statement, StatementId};

use super::EvolutionError;

pub const XSD: &str = "http://www.w3.org/2001/XMLSchema#";

pub fn entity_iri(base: &str, id: EntityId) -> String {
    format!("{base}resource/{id}")
}

pub fn predicate_iri(base: &str, id: PredicateId) -> String {
    format!("{base}predicate/{id}")
}

pub fn datatype_iri(literal: &Literal) -> String {
    let local = match literal.datatype {
        CellType::Integer => "integer",
        CellType::Decimal => "decimal",
        CellType::Boolean => "boolean",
        CellType::Date if literal.lexical.trim().len() == 4 => "gYear",
        CellType::Date => "date",
        CellType::Url => "anyURI",
        CellType::String | CellType::Empty => "string",
    };
    format!("{XSD}{local}")
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            _ => out.push(c),
        }
    }
    out
}

pub fn render_object(base: &str, object: &Object) -> String {
    match object {
        Object::Entity(id) => format!("<{}>", entity_iri(base, *id)),
        Object::Literal(l) => format!("\"{}\"^^<{}>", escape(&l.lexical), datatype_iri(l)),
    }
}

fn render_terms(base: &str, s: &Statement) -> (String, String, String) {
    (
        format!("<{}>", entity_iri(base, s.subject)),
        format!("<{}>", predicate_iri(base, s.predicate)),
        render_object(base, &s.object),
    )
}

/// Canonical N-Triples for the given statements; unknown ids are skipped.
pub fn export_statements(store: &KgStore, ids: &[StatementId], base: &str) -> Vec<u8> {
    let mut terms: Vec<(String, String, String)> =
        ids.iter().filter_map(|id| store.statement(*id)).map(|s| render_terms(base, s)).collect();
    terms.sort();
    terms.dedup();
    let mut out = String::new();
    for (s, p, o) in terms {
        out.push_str(&format!("{s} {p} {o} .\n"));
    }
    out.into_bytes()
}

/// One parsed triple with ids recovered from the IRIs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTriple {
    pub subject: EntityId,
    pub predicate: PredicateId,
    pub object: Object,
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: impl Into<String>) -> EvolutionError {
        EvolutionError::Parse { line: self.line, message: message.into() }
    }

    fn skip_ws(&mut self) {
        while self.text[self.pos..].starts_with([' ', '\t']) {
            self.pos += 1;
        }
    }

    fn iri(&mut self) -> Result<&'a str, EvolutionError> {
        self.skip_ws();
        let rest = &self.text[self.pos..];
        if !rest.starts_with('<') {
            return Err(self.err("expected IRI"));
        }
        let end = rest.find('>').ok_or_else(|| self.err("unterminated IRI"))?;
        self.pos += end + 1;
        Ok(&rest[1..end])
    }

    fn literal(&mut self) -> Result<(String, &'a str), EvolutionError> {
        let rest = &self.text[self.pos..];
        let mut out = String::new();
        let mut chars = rest.char_indices().skip(1);
        let close = loop {
            let (i, c) = chars.next().ok_or_else(|| self.err("unterminated literal"))?;
            match c {
                '"' => break i,
                '\\' => {
                    let (_, e) = chars.next().ok_or_else(|| self.err("dangling escape"))?;
                    match e {
                        '\\' => out.push('\\'),
                        '"' => out.push('"'),
                        'n' => out.push('\n'),
                        'r' => out.push('\r'),
                        't' => out.push('\t'),
                        'u' | 'U' => {
                            let len = if e == 'u' { 4 } else { 8 };
                            let hex: String = (0..len).filter_map(|_| chars.next().map(|(_, h)| h)).collect();
                            let ch = u32::from_str_radix(&hex, 16)
                                .ok()
                                .and_then(char::from_u32)
                                .ok_or_else(|| self.err(format!("bad unicode escape {hex:?}")))?;
                            out.push(ch);
                        }
                        other => return Err(self.err(format!("unknown escape \\{other}"))),
                    }
                }
                c => out.push(c),
            }
        };
        self.pos += close + 1;
        if !self.text[self.pos..].starts_with("^^") {
            return Err(self.err("literal without datatype"));
        }
        self.pos += 2;
        let datatype = self.iri()?;
        Ok((out, datatype))
    }

    fn object(&mut self) -> Result<Object, EvolutionError> {
        self.skip_ws();
        if self.text[self.pos..].starts_with('"') {
            let (lexical, datatype) = self.literal()?;
            let ty = match datatype.strip_prefix(XSD) {
                Some("string") => CellType::String,
                Some("integer") => CellType::Integer,
                Some("decimal") => CellType::Decimal,
                Some("boolean") => CellType::Boolean,
                Some("date") | Some("gYear") => CellType::Date,
                Some("anyURI") => CellType::Url,
                _ => return Err(self.err(format!("unsupported datatype <{datatype}>"))),
            };
            let literal = Literal::new(lexical, ty).map_err(|e| self.err(e.to_string()))?;
            Ok(Object::Literal(literal))
        } else {
            let iri = self.iri()?;
            Ok(Object::Entity(parse_entity(iri).map_err(|m| self.err(m))?))
        }
    }
}

fn id_after<'a>(iri: &'a str, segment: &str) -> Option<&'a str> {
    let at = iri.rfind(segment)?;
    Some(&iri[at + segment.len()..])
}

fn parse_entity(iri: &str) -> Result<EntityId, String> {
    id_after(iri, "/resource/").and_then(|id| id.parse().ok()).ok_or_else(|| format!("not an entity IRI: <{iri}>"))
}

fn parse_predicate(iri: &str) -> Result<PredicateId, String> {
    id_after(iri, "/predicate/").and_then(|id| id.parse().ok()).ok_or_else(|| format!("not a predicate IRI: <{iri}>"))
}

/// Parse N-Triples produced by [`export_statements`]. Blank lines and `#`
/// comments are ignored.
pub fn parse_ntriples(bytes: &[u8]) -> Result<Vec<ParsedTriple>, EvolutionError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| EvolutionError::Parse { line: 0, message: format!("not UTF-8: {e}") })?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cur = Cursor { text: line, pos: 0, line: i + 1 };
        let subject = parse_entity(cur.iri()?).map_err(|m| cur.err(m))?;
        let predicate = parse_predicate(cur.iri()?).map_err(|m| cur.err(m))?;
        let object = cur.object()?;
        cur.skip_ws();
        if &line[cur.pos..] != "." {
            return Err(cur.err("expected final ."));
        }
        out.push(ParsedTriple { subject, predicate, object });
    }
    Ok(out)
}

/// Insert parsed triples into the store (duplicates are found, not re-added)
/// and return their statement ids in input order.
pub fn import_ntriples(bytes: &[u8], store: &mut KgStore) -> Result<Vec<StatementId>, EvolutionError> {
    let triples = parse_ntriples(bytes)?;
    let mut next = store.clone();
    let mut ids = Vec::with_capacity(triples.len());
    for t in triples {
        ids.push(next.add_statement(t.subject, t.predicate, t.object)?);
    }
    *store = next;
    Ok(ids)
}
