//! Independent oracles and random generators for the integration tests.
//!
//! Nothing here calls into the code under test to compute an expected value:
//! cell kinds are known from generation, similarity is recomputed from its
//! definition, and structure checks compare against the source table.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::prelude::*;
use rand::rngs::StdRng;
pub use rand::Rng;

use tabkg_core::annotator::CellType;
use tabkg_core::session::{Action, AlignmentTarget, FlagResolution, Session};
use tabkg_core::store::{ClassRef, KgStore, Origin};
use tabkg_core::structurer::{leaf_pairs, GroupSpec, HierarchyEdge, HierarchySpec, StructuredModel};
use tabkg_core::table::{Cell, Table};
use tabkg_core::annotator::PredicateBinding;

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- cell kinds

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    Empty,
    Boolean,
    Integer,
    Decimal,
    Date,
    Url,
    Text,
}

pub const KINDS: [Kind; 7] = [Kind::Empty, Kind::Boolean, Kind::Integer, Kind::Decimal, Kind::Date, Kind::Url, Kind::Text];

/// Words that never lex as anything but text.
pub const WORDS: [&str; 16] = [
    "alpha", "berlin", "cortex", "delta", "ember", "falcon", "granite", "harbor", "iris", "juniper", "kelvin",
    "lumen", "meadow", "nectar", "orbit", "prism",
];

pub fn cell_of(rng: &mut StdRng, kind: Kind) -> String {
    match kind {
        Kind::Empty => ["", " ", "\t"].choose(rng).unwrap().to_string(),
        Kind::Boolean => ["true", "False", "YES", "no"].choose(rng).unwrap().to_string(),
        Kind::Integer => rng.gen_range(-99_999i64..99_999).to_string(),
        Kind::Decimal => format!("{}.{}", rng.gen_range(0..1000), rng.gen_range(0..100)),
        Kind::Date => format!("{:04}-{:02}-{:02}", rng.gen_range(1900..2100), rng.gen_range(1..=12), rng.gen_range(1..=28)),
        Kind::Url => format!("https://{}.org/{}", WORDS.choose(rng).unwrap(), WORDS.choose(rng).unwrap()),
        Kind::Text => format!("{} {}", WORDS.choose(rng).unwrap(), WORDS.choose(rng).unwrap()),
    }
}

pub fn kind_type(kind: Kind) -> CellType {
    match kind {
        Kind::Empty => CellType::Empty,
        Kind::Boolean => CellType::Boolean,
        Kind::Integer => CellType::Integer,
        Kind::Decimal => CellType::Decimal,
        Kind::Date => CellType::Date,
        Kind::Url => CellType::Url,
        Kind::Text => CellType::String,
    }
}

/// A column skewed towards one kind so that majorities and ties both occur.
pub fn random_column(rng: &mut StdRng, len: usize) -> Vec<Kind> {
    let dominant = *KINDS.choose(rng).unwrap();
    let bias = rng.gen_range(0.0..1.0);
    (0..len)
        .map(|_| if rng.gen_bool(bias) { dominant } else { *KINDS.choose(rng).unwrap() })
        .collect()
}

/// Brute-force majority vote over known kinds: count, take the largest count,
/// break ties by the fixed preference string > decimal > date > url >
/// integer > boolean. Returns the winner and the rows that conflict with it.
pub fn oracle_vote(kinds: &[Kind]) -> (CellType, Vec<usize>) {
    const PREFERENCE: [Kind; 6] = [Kind::Text, Kind::Decimal, Kind::Date, Kind::Url, Kind::Integer, Kind::Boolean];
    let mut best: Option<(Kind, usize)> = None;
    for k in PREFERENCE {
        let n = kinds.iter().filter(|x| **x == k).count();
        if n > 0 && best.is_none_or(|(_, m)| n > m) {
            best = Some((k, n));
        }
    }
    let winner = best.map_or(CellType::String, |(k, _)| kind_type(k));
    let flagged = kinds
        .iter()
        .enumerate()
        .filter(|(_, k)| {
            let t = kind_type(**k);
            **k != Kind::Empty && t != winner && !(t == CellType::Integer && winner == CellType::Decimal)
        })
        .map(|(i, _)| i)
        .collect();
    (winner, flagged)
}

// ---------------------------------------------------------------- similarity

/// Casefold, strip surrounding whitespace and ASCII punctuation, collapse
/// inner whitespace. Generated labels are ASCII only.
pub fn oracle_normalize(s: &str) -> String {
    let lower = s.to_lowercase();
    let trimmed = lower.trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation());
    trimmed.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn grams(s: &str) -> HashSet<String> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = HashSet::new();
    match chars.len() {
        0 => {}
        1 | 2 => {
            out.insert(s.to_string());
        }
        n => {
            for i in 0..n - 2 {
                out.insert(chars[i..i + 3].iter().collect());
            }
        }
    }
    out
}

pub fn oracle_similarity(a: &str, b: &str) -> f64 {
    let (na, nb) = (oracle_normalize(a), oracle_normalize(b));
    if na == nb {
        return 1.0;
    }
    let (ga, gb) = (grams(&na), grams(&nb));
    let inter = ga.iter().filter(|g| gb.contains(*g)).count();
    let union = ga.len() + gb.len() - inter;
    if union == 0 {
        0.0
    } else {
        // distinct labels never score a full match
        (inter as f64 / union as f64).min(0.99)
    }
}

/// Linear scan over `(id, label)` items: keep scores at or above the
/// threshold, sort by score desc, label asc, id asc, cut at `limit`.
pub fn oracle_lookup(items: &[(u64, String)], query: &str, threshold: f64, limit: usize) -> Vec<(u64, String, f64)> {
    let mut hits: Vec<(u64, String, f64)> = items
        .iter()
        .map(|(id, label)| (*id, label.clone(), oracle_similarity(query, label)))
        .filter(|(_, _, s)| *s >= threshold)
        .collect();
    hits.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.1.cmp(&b.1)).then(a.0.cmp(&b.0)));
    hits.truncate(limit);
    hits
}

const SYLLABLES: [&str; 10] = ["ka", "ber", "lin", "to", "ma", "ri", "son", "del", "ta", "nor"];

/// Short labels from a small syllable pool so that fuzzy overlaps are common.
pub fn random_label(rng: &mut StdRng) -> String {
    let words = rng.gen_range(1..=2);
    let mut parts = Vec::new();
    for _ in 0..words {
        let n = rng.gen_range(1..=3);
        parts.push((0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect::<String>());
    }
    parts.join(" ")
}

/// A surface variant of `label` that normalizes to the same text.
pub fn variant(rng: &mut StdRng, label: &str) -> String {
    match rng.gen_range(0..4) {
        0 => label.to_uppercase(),
        1 => format!("  {label}. "),
        2 => label.replace(' ', "   "),
        _ => format!("\"{label}\""),
    }
}

/// A variant that usually normalizes differently: one character dropped or added.
pub fn perturb(rng: &mut StdRng, label: &str) -> String {
    let mut chars: Vec<char> = label.chars().collect();
    if rng.gen_bool(0.5) && chars.len() > 1 {
        let i = rng.gen_range(0..chars.len());
        chars.remove(i);
    } else {
        let i = rng.gen_range(0..=chars.len());
        chars.insert(i, *['x', 'a', 'n'].choose(rng).unwrap());
    }
    chars.into_iter().collect()
}

pub fn random_store(rng: &mut StdRng, entities: usize, predicates: usize) -> KgStore {
    let mut store = KgStore::new();
    for _ in 0..entities {
        let class = match rng.gen_range(0..3) {
            0 => None,
            1 => Some(ClassRef::new("Place")),
            _ => Some(ClassRef::new("Method")),
        };
        store.upsert_entity(&random_label(rng), class, Origin::Human).unwrap();
    }
    for _ in 0..predicates {
        store.upsert_predicate(&random_label(rng), None).unwrap();
    }
    store
}

/// A query drawn from the store's labels (exact, variant or perturbed) or fresh.
pub fn random_query(rng: &mut StdRng, labels: &[String]) -> String {
    let base = labels.choose(rng).cloned().unwrap_or_else(|| random_label(rng));
    match rng.gen_range(0..4) {
        0 => base,
        1 => variant(rng, &base),
        2 => perturb(rng, &base),
        _ => random_label(rng),
    }
}

// ---------------------------------------------------------------- sessions

pub const OPENED_AT: &str = "2024-01-01T00:00:00Z";

/// A small table over a random store: entity columns mixing exact, variant
/// and perturbed store labels (some as `;` enumerations), a numeric column
/// with the odd stray string, and headers that sometimes name predicates.
pub fn random_session_input(rng: &mut StdRng) -> (Table, KgStore) {
    let (ne, np) = (rng.gen_range(3..15), rng.gen_range(1..5));
    let store = random_store(rng, ne, np);
    let entity_labels: Vec<String> = store.entities().map(|e| e.label.clone()).collect();
    let predicate_labels: Vec<String> = store.predicates().map(|p| p.label.clone()).collect();
    let width = rng.gen_range(2..5);
    let height = rng.gen_range(1..6);
    let mut used = HashSet::new();
    let mut header = Vec::new();
    for c in 0..width {
        let mut label = if rng.gen_bool(0.5) {
            random_query(rng, &predicate_labels)
        } else {
            format!("{} {c}", WORDS.choose(rng).unwrap())
        };
        if !used.insert(oracle_normalize(&label)) || oracle_normalize(&label).is_empty() {
            label = format!("col {c}");
            used.insert(label.clone());
        }
        header.push(label);
    }
    let numeric: Vec<bool> = (0..width).map(|_| rng.gen_bool(0.3)).collect();
    let rows = (0..height)
        .map(|_| {
            (0..width)
                .map(|c| {
                    let text = if numeric[c] {
                        if rng.gen_bool(0.15) {
                            WORDS.choose(rng).unwrap().to_string()
                        } else {
                            cell_of(rng, Kind::Integer)
                        }
                    } else if rng.gen_bool(0.1) {
                        String::new()
                    } else if rng.gen_bool(0.2) {
                        format!("{}; {}", random_query(rng, &entity_labels), random_query(rng, &entity_labels))
                    } else {
                        random_query(rng, &entity_labels)
                    };
                    Cell::new(text)
                })
                .collect()
        })
        .collect();
    let table = Table::new("random", header, rows).unwrap();
    (table, store)
}

fn value_of(rng: &mut StdRng, t: CellType) -> String {
    match t {
        CellType::Boolean => cell_of(rng, Kind::Boolean),
        CellType::Integer => cell_of(rng, Kind::Integer),
        CellType::Decimal => cell_of(rng, Kind::Decimal),
        CellType::Date => cell_of(rng, Kind::Date),
        CellType::Url => cell_of(rng, Kind::Url),
        CellType::String | CellType::Empty => cell_of(rng, Kind::Text),
    }
}

/// A plausible human action for the current state. It may still be rejected;
/// callers treat rejections as no-ops.
pub fn random_action(rng: &mut StdRng, session: &Session) -> Action {
    let table = session.table();
    let width = table.width();
    let height = table.height().max(1);
    let pending = session.pending();
    let labels: Vec<String> = table.header().iter().map(|h| h.raw_label.clone()).collect();
    let store = session.store();
    loop {
        match rng.gen_range(0..10) {
            0 => {
                if let Some(p) = pending.predicates.choose(rng) {
                    if let Some(c) = p.candidates.choose(rng) {
                        if let tabkg_core::store::CandidateTarget::Predicate(predicate) = c.target {
                            return Action::AcceptPredicate { column: p.column, predicate };
                        }
                    }
                }
            }
            1 => {
                return Action::SetPredicate {
                    column: rng.gen_range(0..width),
                    binding: PredicateBinding::New { label: random_label(rng) },
                }
            }
            2 => {
                let cell_type = *[CellType::String, CellType::Integer, CellType::Decimal, CellType::Url].choose(rng).unwrap();
                return Action::SetColumnType { column: rng.gen_range(0..width), cell_type };
            }
            3 => {
                if let Some(f) = pending.flags.choose(rng) {
                    let resolution = match rng.gen_range(0..3) {
                        0 => FlagResolution::Coerce,
                        1 => FlagResolution::ChangeType { cell_type: f.found_type },
                        _ => FlagResolution::EditValue { text: value_of(rng, f.expected_type) },
                    };
                    return Action::ResolveFlag { row: f.row, column: f.column, resolution };
                }
            }
            4 | 5 => {
                if let Some(a) = pending.alignments.choose(rng) {
                    if let Some(c) = a.candidates.choose(rng) {
                        if let tabkg_core::store::CandidateTarget::Entity(entity) = c.target {
                            return Action::AcceptAlignment {
                                row: a.row,
                                column: a.column,
                                value_index: a.value_index,
                                entity,
                            };
                        }
                    }
                }
            }
            6 => {
                if let Some(a) = pending.alignments.choose(rng) {
                    let target = match store.entities().choose(rng) {
                        Some(e) if rng.gen_bool(0.5) => AlignmentTarget::Entity { id: e.id },
                        _ => AlignmentTarget::Literal,
                    };
                    return Action::SetAlignment { row: a.row, column: a.column, value_index: a.value_index, target };
                }
            }
            7 => {
                if let Some(a) = pending.alignments.choose(rng) {
                    return Action::CreateEntityAndAlign {
                        row: a.row,
                        column: a.column,
                        value_index: a.value_index,
                        label: a.text.clone(),
                        class_ref: rng.gen_bool(0.5).then(|| ClassRef::new("Thing")),
                    };
                }
            }
            8 => {
                let delimiters = if rng.gen_bool(0.5) { vec![";".to_string()] } else { Vec::new() };
                return Action::SplitCell { row: rng.gen_range(0..height), column: rng.gen_range(0..width), delimiters };
            }
            _ => {
                if width >= 2 {
                    let picked: Vec<&String> = labels.choose_multiple(rng, 2).collect();
                    return if rng.gen_bool(0.5) {
                        Action::DefineHierarchy {
                            spec: HierarchySpec { edges: vec![HierarchyEdge::new(picked[0].clone(), picked[1].clone())] },
                        }
                    } else {
                        Action::DefineGroup {
                            spec: GroupSpec {
                                group_label: WORDS.choose(rng).unwrap().to_string(),
                                members: picked.into_iter().cloned().collect(),
                            },
                        }
                    };
                }
            }
        }
    }
}

/// Open a random session and drive it with `steps` random actions.
pub fn random_session(rng: &mut StdRng, steps: usize) -> (Table, Arc<KgStore>, Session) {
    let (table, store) = random_session_input(rng);
    let store = Arc::new(store);
    let mut session = Session::open("s1", table.clone(), store.clone(), OPENED_AT).unwrap();
    for i in 0..steps {
        let action = random_action(rng, &session);
        let at = format!("2024-01-01T00:{:02}:{:02}Z", i / 60 % 60, i % 60);
        let _ = session.apply(tabkg_core::DecisionRequest::at(action, at));
    }
    (table, store, session)
}

// ---------------------------------------------------------------- structure

/// Random forest over a subset of columns, then one group over 2 or 3 of the
/// remaining top-level columns. Labels must be unique.
pub fn random_structure(rng: &mut StdRng, labels: &[String]) -> (HierarchySpec, Option<GroupSpec>) {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    let mut children = HashSet::new();
    for (i, &col) in order.iter().enumerate().skip(1) {
        if rng.gen_bool(0.4) {
            let parent = order[rng.gen_range(0..i)];
            edges.push(HierarchyEdge::new(labels[parent].clone(), labels[col].clone()));
            children.insert(col);
        }
    }
    let top: Vec<usize> = (0..labels.len()).filter(|c| !children.contains(c)).collect();
    let group = (top.len() >= 2 && rng.gen_bool(0.7)).then(|| {
        let n = rng.gen_range(2..=top.len().min(3));
        GroupSpec {
            group_label: format!("group {}", rng.gen_range(0..100)),
            members: top.choose_multiple(rng, n).map(|c| labels[*c].clone()).collect(),
        }
    });
    (HierarchySpec { edges }, group)
}

/// Multiset of `(column, trimmed text)` over the non-empty source cells of one row.
pub fn source_leaves(table: &Table, row: usize) -> BTreeMap<(usize, String), usize> {
    let mut out = BTreeMap::new();
    for (c, cell) in table.rows()[row].iter().enumerate() {
        for v in &cell.values {
            let t = v.trim();
            if !t.is_empty() {
                *out.entry((c, t.to_string())).or_insert(0) += 1;
            }
        }
    }
    out
}

/// Multiset of `(column, trimmed text)` reachable in one contribution's tree.
pub fn model_leaves(model: &StructuredModel, row: usize) -> BTreeMap<(usize, String), usize> {
    let contribution = model.contributions.iter().find(|c| c.row == row).expect("contribution");
    let nodes = model.instantiate(contribution);
    let mut out = BTreeMap::new();
    for (c, v) in leaf_pairs(&nodes) {
        *out.entry((c, v.text.trim().to_string())).or_insert(0) += 1;
    }
    out
}

pub fn random_typed_table(rng: &mut StdRng, width: usize, height: usize) -> Table {
    let header: Vec<String> = (0..width).map(|c| format!("{} {c}", WORDS.choose(rng).unwrap())).collect();
    let kinds: Vec<Kind> = (0..width).map(|_| *KINDS.choose(rng).unwrap()).collect();
    let rows = (0..height)
        .map(|_| {
            (0..width)
                .map(|c| {
                    let kind = if rng.gen_bool(0.2) { Kind::Empty } else { kinds[c] };
                    Cell::new(cell_of(rng, kind))
                })
                .collect()
        })
        .collect();
    Table::new("typed", header, rows).unwrap()
}
