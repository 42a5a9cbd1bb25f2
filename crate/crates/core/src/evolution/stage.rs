//! Stage classification of artifacts along the five-stage evolution model.
//!
//! | stage | criterion | check |
//! |-------|-----------|-------|
//! | 1 | `s1.digital` | payload is readable and non-empty |
//! | 1 | `s1.identifier` | metadata `doi` looks like `10.NNNN/...` (optionally `doi:` or `https://doi.org/` prefixed), or `identifier` is non-empty |
//! | 1 | `s1.citation` | metadata has non-empty `title` and `author` (or `authors`) |
//! | 2 | `s2.machine_readable` | spreadsheet by extension or `format` metadata (xlsx, xls, ods), or a payload that parses as CSV, JSON or N-Triples; PDFs fail |
//! | 3 | `s3.open_format` | payload is CSV, the semantic document or N-Triples and parses as such |
//! | 4 | `s4.document` | a semantic document with `@context`, `@graph` and `schema` |
//! | 4 | `s4.alignment` | at least one confirmed predicate or linked value |
//! | 4 | `s4.metadata` | document metadata has a key besides `origin_format` and `header` |
//! | 4 | `s4.structure` | every property appears exactly once in the structure tree and every key is in `@context` |
//! | 5 | `s5.triples` | N-Triples payload with at least one triple |
//! | 5 | `s5.integrated` | every triple is present in the accompanying store snapshot |
//!
//! Stages are a ladder: once a stage has a failing criterion, every criterion
//! above it is reported as failed ("blocked"), with the result of its own
//! check kept in the evidence. The achieved stage is the largest `k` for
//! which all criteria of stages `1..=k` pass, or 0 when a stage-1 criterion
//! fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::store::KgStore;
use crate::table::{parse_csv, CsvConfig, HEADER_KEY, ORIGIN_FORMAT_KEY};

use super::ntriples::parse_ntriples;
use super::EvolutionError;

/// Where an artifact's bytes live.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Path(PathBuf),
    Inline(String),
}

impl Source {
    fn read(&self) -> Result<Vec<u8>, EvolutionError> {
        match self {
            Source::Path(p) => fs::read(p).map_err(|e| EvolutionError::Classify(format!("cannot read {}: {e}", p.display()))),
            Source::Inline(s) => Ok(s.as_bytes().to_vec()),
        }
    }

    fn extension(&self) -> Option<String> {
        match self {
            Source::Path(p) => p.extension().map(|e| e.to_string_lossy().to_ascii_lowercase()),
            Source::Inline(_) => None,
        }
    }

    /// Resolve relative paths against `dir`.
    fn rebase(&mut self, dir: &Path) {
        if let Source::Path(p) = self {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    PdfRef,
    TabularProprietary,
    TabularOpen,
    SemanticDoc,
    KgIntegrated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    PdfRef { source: Source },
    TabularProprietary { source: Source },
    TabularOpen { source: Source },
    SemanticDoc { source: Source },
    KgIntegrated { document: Source, triples: Source, store: Source },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactDescriptor {
    #[serde(flatten)]
    pub payload: Payload,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

const SPREADSHEET_FORMATS: [&str; 3] = ["xlsx", "xls", "ods"];

impl ArtifactDescriptor {
    pub fn new(payload: Payload, metadata: BTreeMap<String, String>) -> Self {
        Self { payload, metadata }
    }

    pub fn kind(&self) -> ArtifactKind {
        match self.payload {
            Payload::PdfRef { .. } => ArtifactKind::PdfRef,
            Payload::TabularProprietary { .. } => ArtifactKind::TabularProprietary,
            Payload::TabularOpen { .. } => ArtifactKind::TabularOpen,
            Payload::SemanticDoc { .. } => ArtifactKind::SemanticDoc,
            Payload::KgIntegrated { .. } => ArtifactKind::KgIntegrated,
        }
    }

    /// Describe a file on disk. `*.artifact.json` files hold a descriptor
    /// (relative paths resolve against the file's directory); other files are
    /// classified by extension. Metadata comes from a `<file>.meta.json`
    /// sidecar holding a flat JSON object, when present.
    pub fn from_path(path: &Path) -> Result<Self, EvolutionError> {
        let name = path.file_name().map(|n| n.to_string_lossy().to_string()).unwrap_or_default();
        if name.ends_with(".artifact.json") {
            let bytes = fs::read(path)
                .map_err(|e| EvolutionError::Classify(format!("cannot read {}: {e}", path.display())))?;
            let mut desc: ArtifactDescriptor = serde_json::from_slice(&bytes)
                .map_err(|e| EvolutionError::Classify(format!("bad descriptor {}: {e}", path.display())))?;
            let dir = path.parent().unwrap_or(Path::new("."));
            match &mut desc.payload {
                Payload::PdfRef { source }
                | Payload::TabularProprietary { source }
                | Payload::TabularOpen { source }
                | Payload::SemanticDoc { source } => source.rebase(dir),
                Payload::KgIntegrated { document, triples, store } => {
                    document.rebase(dir);
                    triples.rebase(dir);
                    store.rebase(dir);
                }
            }
            return Ok(desc);
        }
        let source = Source::Path(path.to_path_buf());
        let ext = source.extension().unwrap_or_default();
        let payload = match ext.as_str() {
            "pdf" => Payload::PdfRef { source },
            e if SPREADSHEET_FORMATS.contains(&e) => Payload::TabularProprietary { source },
            "csv" | "tsv" => Payload::TabularOpen { source },
            "json" | "jsonld" => Payload::SemanticDoc { source },
            other => return Err(EvolutionError::Classify(format!("cannot tell the artifact kind of .{other} files"))),
        };
        Ok(Self { payload, metadata: read_sidecar(path)? })
    }
}

/// Metadata from the `<file>.meta.json` sidecar next to `path`; empty when absent.
pub fn read_sidecar(path: &Path) -> Result<BTreeMap<String, String>, EvolutionError> {
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".meta.json");
    let sidecar = PathBuf::from(sidecar);
    if !sidecar.exists() {
        return Ok(BTreeMap::new());
    }
    let bytes = fs::read(&sidecar)
        .map_err(|e| EvolutionError::Classify(format!("cannot read {}: {e}", sidecar.display())))?;
    let value: BTreeMap<String, Value> = serde_json::from_slice(&bytes)
        .map_err(|e| EvolutionError::Classify(format!("bad metadata {}: {e}", sidecar.display())))?;
    Ok(value
        .into_iter()
        .map(|(k, v)| {
            let text = match v {
                Value::String(s) => s,
                other => other.to_string(),
            };
            (k, text)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criterion {
    pub stage: u8,
    pub id: String,
    pub description: String,
    pub passed: bool,
    pub evidence: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub achieved_stage: u8,
    pub criteria: Vec<Criterion>,
}

impl StageReport {
    /// Criteria above the first failing stage are reported as blocked, with
    /// their own check kept in the evidence.
    fn from_criteria(mut criteria: Vec<Criterion>) -> Self {
        let first_failed = criteria.iter().filter(|c| !c.passed).map(|c| c.stage).min();
        if let Some(f) = first_failed {
            for c in criteria.iter_mut().filter(|c| c.stage > f) {
                let own = if c.passed { "passes" } else { "fails" };
                c.evidence = format!("blocked by stage {f}; own check {own}: {}", c.evidence);
                c.passed = false;
            }
        }
        let mut achieved = 0;
        for stage in 1..=5u8 {
            if criteria.iter().filter(|c| c.stage == stage).all(|c| c.passed) {
                achieved = stage;
            } else {
                break;
            }
        }
        Self { achieved_stage: achieved, criteria }
    }

    /// No stage's criteria all pass while a lower stage has a failure.
    pub fn is_cumulative(&self) -> bool {
        let passes = |s: u8| self.criteria.iter().filter(|c| c.stage == s).all(|c| c.passed);
        (1..=5u8).all(|k| !passes(k) || (1..k).all(passes))
    }

    pub fn criterion(&self, id: &str) -> Option<&Criterion> {
        self.criteria.iter().find(|c| c.id == id)
    }
}

fn criterion(stage: u8, id: &str, description: &str, passed: bool, evidence: impl Into<String>) -> Criterion {
    Criterion { stage, id: id.into(), description: description.into(), passed, evidence: evidence.into() }
}

fn looks_like_doi(raw: &str) -> bool {
    let t = raw.trim();
    let t = t
        .strip_prefix("https://doi.org/")
        .or_else(|| t.strip_prefix("http://doi.org/"))
        .or_else(|| t.strip_prefix("doi:"))
        .unwrap_or(t);
    let Some(rest) = t.strip_prefix("10.") else { return false };
    let Some((registrant, suffix)) = rest.split_once('/') else { return false };
    (4..=9).contains(&registrant.len())
        && registrant.bytes().all(|b| b.is_ascii_digit())
        && !suffix.is_empty()
        && !suffix.chars().any(char::is_whitespace)
}

fn non_empty<'a>(meta: &'a BTreeMap<String, String>, key: &str) -> Option<&'a str> {
    meta.get(key).map(|v| v.trim()).filter(|v| !v.is_empty())
}

/// Parsed payload pieces the criteria look at.
#[derive(Default)]
struct Evidence {
    bytes: usize,
    csv: Option<Result<(usize, usize), String>>,
    document: Option<Result<Value, String>>,
    triples: Option<Result<usize, String>>,
    integrated: Option<Result<(), String>>,
}

fn load(desc: &ArtifactDescriptor) -> Result<Evidence, EvolutionError> {
    let mut ev = Evidence::default();
    let parse_doc = |bytes: &[u8]| serde_json::from_slice::<Value>(bytes).map_err(|e| e.to_string());
    match &desc.payload {
        Payload::PdfRef { source } | Payload::TabularProprietary { source } => {
            ev.bytes = source.read()?.len();
        }
        Payload::TabularOpen { source } => {
            let bytes = source.read()?;
            ev.bytes = bytes.len();
            let mut config = CsvConfig::default();
            if source.extension().as_deref() == Some("tsv") {
                config.delimiter = '\t';
            }
            ev.csv = Some(
                parse_csv(&bytes, &config).map(|o| (o.table.width(), o.table.height())).map_err(|e| e.to_string()),
            );
        }
        Payload::SemanticDoc { source } => {
            let bytes = source.read()?;
            ev.bytes = bytes.len();
            ev.document = Some(parse_doc(&bytes));
        }
        Payload::KgIntegrated { document, triples, store } => {
            let doc = document.read()?;
            let nt = triples.read()?;
            let snap = store.read()?;
            ev.bytes = doc.len() + nt.len();
            ev.document = Some(parse_doc(&doc));
            let parsed = parse_ntriples(&nt).map_err(|e| e.to_string());
            ev.triples = Some(parsed.as_ref().map(Vec::len).map_err(Clone::clone));
            ev.integrated = Some(match (parsed, KgStore::from_snapshot_bytes(&snap)) {
                (Err(e), _) => Err(e),
                (_, Err(e)) => Err(format!("store snapshot: {e}")),
                (Ok(triples), Ok(kg)) => match triples
                    .iter()
                    .position(|t| kg.find_statement(t.subject, t.predicate, &t.object).is_none())
                {
                    Some(i) => Err(format!("triple {} is not in the store", i + 1)),
                    None => Ok(()),
                },
            });
        }
    }
    Ok(ev)
}

fn doc_metadata(doc: &Value) -> BTreeMap<String, String> {
    doc.get("metadata")
        .and_then(Value::as_object)
        .map(|m| {
            m.iter()
                .map(|(k, v)| (k.clone(), v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string())))
                .collect()
        })
        .unwrap_or_default()
}

fn check_structure(doc: &Value) -> Result<String, String> {
    let context = doc.get("@context").and_then(Value::as_object).ok_or("no @context")?;
    let props = doc
        .pointer("/schema/properties")
        .and_then(Value::as_array)
        .ok_or("no schema.properties")?;
    let keys: Vec<&str> = props.iter().filter_map(|p| p.get("key").and_then(Value::as_str)).collect();
    if keys.len() != props.len() {
        return Err("property without key".into());
    }
    let tree = doc.pointer("/schema/structure").and_then(Value::as_array).ok_or("no schema.structure")?;
    let mut seen = Vec::new();
    let mut groups = 0;
    fn walk<'a>(nodes: &'a [Value], seen: &mut Vec<&'a str>, groups: &mut usize) -> Result<(), String> {
        for n in nodes {
            if let Some(p) = n.get("property").and_then(Value::as_str) {
                seen.push(p);
                walk(n.get("children").and_then(Value::as_array).map(Vec::as_slice).unwrap_or(&[]), seen, groups)?;
            } else if n.get("group").and_then(Value::as_str).is_some() {
                *groups += 1;
                let members = n.get("members").and_then(Value::as_array).ok_or("group without members")?;
                walk(members, seen, groups)?;
            } else {
                return Err("structure node is neither property nor group".into());
            }
        }
        Ok(())
    }
    walk(tree, &mut seen, &mut groups)?;
    let expected: BTreeSet<&str> = keys.iter().copied().collect();
    let got: BTreeSet<&str> = seen.iter().copied().collect();
    if seen.len() != keys.len() || expected != got {
        return Err("structure tree does not cover every property exactly once".into());
    }
    if let Some(missing) = keys.iter().find(|k| !context.contains_key(**k)) {
        return Err(format!("key {missing:?} missing from @context"));
    }
    let nested = tree.iter().filter(|n| n.get("children").and_then(Value::as_array).is_some_and(|c| !c.is_empty())).count();
    Ok(format!("{} properties, {} top-level nodes, {} with children, {groups} groups", keys.len(), tree.len(), nested))
}

/// Evaluate every criterion. Pure apart from reading the payload.
pub fn classify_stage(desc: &ArtifactDescriptor) -> Result<StageReport, EvolutionError> {
    let ev = load(desc)?;
    let kind = desc.kind();
    let mut meta = desc.metadata.clone();
    if let Some(Ok(doc)) = &ev.document {
        for (k, v) in doc_metadata(doc) {
            meta.entry(k).or_insert(v);
        }
    }
    let mut out = Vec::new();

    out.push(criterion(1, "s1.digital", "artifact is a readable digital file", ev.bytes > 0, format!("{} bytes", ev.bytes)));
    let doi = non_empty(&meta, "doi");
    let identifier = non_empty(&meta, "identifier");
    let (ok, evidence) = match (doi, identifier) {
        (Some(d), _) if looks_like_doi(d) => (true, format!("doi {d}")),
        (_, Some(i)) => (true, format!("identifier {i}")),
        (Some(d), None) => (false, format!("doi {d:?} is malformed")),
        (None, None) => (false, "no doi or identifier metadata".to_string()),
    };
    out.push(criterion(1, "s1.identifier", "stable identifier such as a DOI", ok, evidence));
    let title = non_empty(&meta, "title");
    let author = non_empty(&meta, "author").or_else(|| non_empty(&meta, "authors"));
    out.push(criterion(
        1,
        "s1.citation",
        "citable metadata (title and author)",
        title.is_some() && author.is_some(),
        format!("title {}, author {}", if title.is_some() { "present" } else { "missing" }, if author.is_some() { "present" } else { "missing" }),
    ));

    let (ok, evidence) = match kind {
        ArtifactKind::PdfRef => (false, "PDF is human-readable only".to_string()),
        ArtifactKind::TabularProprietary => {
            let declared = non_empty(&meta, "format").map(str::to_ascii_lowercase);
            let ext = match &desc.payload {
                Payload::TabularProprietary { source } => source.extension(),
                _ => None,
            };
            match declared.or(ext) {
                Some(f) if SPREADSHEET_FORMATS.contains(&f.as_str()) => (true, format!("{f} spreadsheet (not parsed)")),
                Some(f) => (false, format!("unknown spreadsheet format {f:?}")),
                None => (false, "no spreadsheet format declared".to_string()),
            }
        }
        ArtifactKind::TabularOpen => match &ev.csv {
            Some(Ok((w, h))) => (true, format!("CSV with {w} columns, {h} rows")),
            Some(Err(e)) => (false, format!("CSV does not parse: {e}")),
            None => (false, "no CSV payload".to_string()),
        },
        ArtifactKind::SemanticDoc | ArtifactKind::KgIntegrated => match &ev.document {
            Some(Ok(_)) => (true, "JSON document parses".to_string()),
            Some(Err(e)) => (false, format!("JSON does not parse: {e}")),
            None => (false, "no document".to_string()),
        },
    };
    out.push(criterion(2, "s2.machine_readable", "machine-readable structured format", ok, evidence));

    let (ok, evidence) = match kind {
        ArtifactKind::PdfRef | ArtifactKind::TabularProprietary => (false, "proprietary or non-tabular format".to_string()),
        ArtifactKind::TabularOpen => match &ev.csv {
            Some(Ok(_)) => (true, "CSV is an open format".to_string()),
            _ => (false, "CSV does not parse".to_string()),
        },
        ArtifactKind::SemanticDoc | ArtifactKind::KgIntegrated => match &ev.document {
            Some(Ok(_)) => (true, "JSON-LD document is an open format".to_string()),
            _ => (false, "document does not parse".to_string()),
        },
    };
    out.push(criterion(3, "s3.open_format", "open, non-proprietary format", ok, evidence));

    let doc = match &ev.document {
        Some(Ok(d)) if d.get("@context").is_some() && d.get("@graph").is_some() && d.get("schema").is_some() => Some(d),
        _ => None,
    };
    out.push(criterion(
        4,
        "s4.document",
        "machine-interpretable semantic document",
        doc.is_some(),
        if doc.is_some() { "@context, @graph and schema present" } else { "not a semantic document" },
    ));
    let (ok, evidence) = match doc.and_then(|d| d.pointer("/schema/properties")).and_then(Value::as_array) {
        Some(props) => {
            let confirmed = props.iter().filter(|p| p.get("confirmed") == Some(&Value::Bool(true))).count();
            let linked: u64 = props.iter().filter_map(|p| p.get("linked_values").and_then(Value::as_u64)).sum();
            (confirmed + linked as usize > 0, format!("{confirmed} confirmed predicates, {linked} linked values"))
        }
        None => (false, "no schema properties".to_string()),
    };
    out.push(criterion(4, "s4.alignment", "at least one semantic alignment", ok, evidence));
    let descriptive: Vec<String> = doc
        .map(doc_metadata)
        .unwrap_or_default()
        .into_keys()
        .filter(|k| k != ORIGIN_FORMAT_KEY && k != HEADER_KEY)
        .collect();
    out.push(criterion(
        4,
        "s4.metadata",
        "document carries descriptive metadata",
        !descriptive.is_empty(),
        format!("metadata keys: {}", descriptive.join(", ")),
    ));
    let (ok, evidence) = match doc.map(check_structure) {
        Some(Ok(e)) => (true, e),
        Some(Err(e)) => (false, e),
        None => (false, "not a semantic document".to_string()),
    };
    out.push(criterion(4, "s4.structure", "hierarchical structure is representable and consistent", ok, evidence));

    let (ok, evidence) = match &ev.triples {
        Some(Ok(n)) if *n > 0 => (true, format!("{n} triples")),
        Some(Ok(_)) => (false, "no triples".to_string()),
        Some(Err(e)) => (false, format!("N-Triples do not parse: {e}")),
        None => (false, "no RDF payload".to_string()),
    };
    out.push(criterion(5, "s5.triples", "machine-actionable RDF statements", ok, evidence));
    let (ok, evidence) = match &ev.integrated {
        Some(Ok(())) => (true, "all triples present in the store".to_string()),
        Some(Err(e)) => (false, e.clone()),
        None => (false, "not integrated into a store".to_string()),
    };
    out.push(criterion(5, "s5.integrated", "statements integrated in the knowledge graph", ok, evidence));

    Ok(StageReport::from_criteria(out))
}
