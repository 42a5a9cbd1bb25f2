//! On-disk data directory: the shared store and one folder per session.
//!
//! ```text
//! <data>/store.snapshot
//! <data>/sessions/<id>/table.csv         uploaded bytes, unchanged
//! <data>/sessions/<id>/session.json      SessionRecord
//! <data>/sessions/<id>/store.snapshot    store frozen at import
//! <data>/sessions/<id>/decisions.jsonl   decision log
//! ```
//!
//! A session is never stored as state: loading parses the table again and
//! replays the decision log over the frozen store.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use tabkg_core::evolution::{
    document_stage, export_semantic_doc, export_triples, integrate, ArtifactDescriptor, IntegrationReceipt,
    Payload, Source, StageReport,
};
use tabkg_core::session::{parse_log, write_log, Applied, LogLine, Phase, Session};
use tabkg_core::store::KgStore;
use tabkg_core::table::{parse_csv, CsvConfig, ParseWarning, Table};
use tabkg_core::DecisionRequest;

use crate::api::GatewayError;

pub const STORE_FILE: &str = "store.snapshot";
const TABLE_FILE: &str = "table.csv";
const RECORD_FILE: &str = "session.json";
const LOG_FILE: &str = "decisions.jsonl";
pub const DOCUMENT_FILE: &str = "document.jsonld";
pub const TRIPLES_FILE: &str = "triples.nt";
pub const ARTIFACT_FILE: &str = "integrated.artifact.json";

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), GatewayError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_store(path: &Path) -> Result<KgStore, GatewayError> {
    if !path.exists() {
        return Ok(KgStore::new());
    }
    Ok(KgStore::load(path)?)
}

pub fn save_store(path: &Path, store: &KgStore) -> Result<(), GatewayError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_atomic(path, &store.to_snapshot_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Jsonld,
    Ntriples,
}

impl std::str::FromStr for ExportFormat {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonld" | "json-ld" => Ok(ExportFormat::Jsonld),
            "ntriples" | "nt" => Ok(ExportFormat::Ntriples),
            other => Err(GatewayError::invalid(format!("unknown export format {other:?}, expected jsonld or ntriples"))),
        }
    }
}

impl ExportFormat {
    pub fn media_type(self) -> &'static str {
        match self {
            ExportFormat::Jsonld => "application/ld+json",
            ExportFormat::Ntriples => "application/n-triples",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ImportOptions {
    pub source_id: Option<String>,
    pub metadata: BTreeMap<String, String>,
    pub config: CsvConfig,
    /// Store the session reads candidates from and integrates into.
    /// Defaults to the data directory's store.
    pub store_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub source_id: String,
    pub config: CsvConfig,
    /// Metadata added on import, on top of what parsing records.
    pub metadata: BTreeMap<String, String>,
    pub opened_at: String,
    pub store_path: PathBuf,
    pub finalized: bool,
}

/// A session together with what is needed to persist it.
#[derive(Debug)]
pub struct Loaded {
    pub record: SessionRecord,
    pub session: Session,
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct Finalized {
    pub session: String,
    pub contributions: usize,
    pub properties: usize,
    pub stage_report: StageReport,
}

impl Loaded {
    /// Apply one decision, stamping it with the current time when the request
    /// carries no timestamp.
    pub fn apply(&mut self, mut request: DecisionRequest) -> Result<Applied, GatewayError> {
        request.timestamp.get_or_insert_with(now);
        Ok(self.session.apply(request)?)
    }

    /// Apply a decision log file. Recorded lines must agree with the session's
    /// log; request lines are applied in order. All or nothing.
    pub fn apply_log(&mut self, text: &str) -> Result<usize, GatewayError> {
        let stamp = now();
        let lines: Vec<LogLine> = parse_log(text)?
            .into_iter()
            .map(|line| match line {
                LogLine::Request(mut r) => {
                    r.timestamp.get_or_insert_with(|| stamp.clone());
                    LogLine::Request(r)
                }
                recorded => recorded,
            })
            .collect();
        Ok(self.session.apply_log(&lines)?.len())
    }

    pub fn finalize(&mut self) -> Result<Finalized, GatewayError> {
        let model = self.session.finalize()?;
        self.record.finalized = true;
        let stage_report = document_stage(&model, self.session.store(), tabkg_core::evolution::DEFAULT_BASE)?;
        Ok(Finalized {
            session: self.record.id.clone(),
            contributions: model.contributions.len(),
            properties: model.properties.len(),
            stage_report,
        })
    }

    /// Export against `store`, the session's target store in its current state.
    pub fn export(&self, store: &KgStore, format: ExportFormat, base: &str) -> Result<Vec<u8>, GatewayError> {
        let model = self.session.model()?;
        Ok(match format {
            ExportFormat::Jsonld => export_semantic_doc(&model, store, base),
            ExportFormat::Ntriples => export_triples(&model, store, base)?,
        })
    }

    /// Commit the model into `store` and write the stage-5 artifact files next
    /// to the session. The caller persists `store`.
    pub fn integrate(&self, store: &mut KgStore, base: &str) -> Result<IntegrationReceipt, GatewayError> {
        let model = self.session.model()?;
        let receipt = integrate(&model, store, base)?;
        write_atomic(&self.dir.join(DOCUMENT_FILE), &export_semantic_doc(&model, store, base))?;
        write_atomic(&self.dir.join(TRIPLES_FILE), &export_triples(&model, store, base)?)?;
        let descriptor = ArtifactDescriptor::new(
            Payload::KgIntegrated {
                document: Source::Path(DOCUMENT_FILE.into()),
                triples: Source::Path(TRIPLES_FILE.into()),
                store: Source::Path(self.record.store_path.clone()),
            },
            model.metadata.clone(),
        );
        let json = serde_json::to_vec_pretty(&descriptor).map_err(GatewayError::internal)?;
        write_atomic(&self.dir.join(ARTIFACT_FILE), &json)?;
        Ok(receipt)
    }

    pub fn is_finalized(&self) -> bool {
        self.session.phase() == Phase::Finalized
    }
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let root = std::path::absolute(root.into())?;
        fs::create_dir_all(root.join("sessions"))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn store_path(&self) -> PathBuf {
        self.root.join(STORE_FILE)
    }

    fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(id)
    }

    pub fn session_ids(&self) -> Result<Vec<String>, GatewayError> {
        let mut ids: Vec<(u64, String)> = fs::read_dir(self.root.join("sessions"))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().to_string();
                name.strip_prefix('s').and_then(|n| n.parse().ok()).map(|n| (n, name))
            })
            .collect();
        ids.sort();
        Ok(ids.into_iter().map(|(_, name)| name).collect())
    }

    /// Parse `csv`, open a session against a frozen copy of the target store
    /// and persist it.
    pub fn import(&self, csv: &[u8], options: ImportOptions) -> Result<(Loaded, Vec<ParseWarning>), GatewayError> {
        let store_path = match &options.store_path {
            Some(p) => std::path::absolute(p)?,
            None => self.store_path(),
        };
        let store = load_store(&store_path)?;
        self.import_with_store(csv, options, store_path, store)
    }

    pub fn import_with_store(
        &self,
        csv: &[u8],
        options: ImportOptions,
        store_path: PathBuf,
        store: KgStore,
    ) -> Result<(Loaded, Vec<ParseWarning>), GatewayError> {
        let outcome = parse_csv(csv, &options.config)?;
        let next = self
            .session_ids()?
            .iter()
            .filter_map(|id| id[1..].parse::<u64>().ok())
            .max()
            .unwrap_or(0)
            + 1;
        let record = SessionRecord {
            id: format!("s{next}"),
            source_id: options.source_id.unwrap_or_else(|| "table".to_string()),
            config: options.config,
            metadata: options.metadata,
            opened_at: now(),
            store_path,
            finalized: false,
        };
        let table = build_table(outcome.table, &record);
        let session = Session::open(record.id.clone(), table, Arc::new(store), record.opened_at.clone())?;
        let dir = self.session_dir(&record.id);
        fs::create_dir_all(&dir)?;
        write_atomic(&dir.join(TABLE_FILE), csv)?;
        write_atomic(&dir.join(STORE_FILE), &session.store().to_snapshot_bytes())?;
        let loaded = Loaded { record, session, dir };
        self.save(&loaded)?;
        Ok((loaded, outcome.warnings))
    }

    /// Rebuild a session by replaying its log.
    pub fn load(&self, id: &str) -> Result<Loaded, GatewayError> {
        let dir = self.session_dir(id);
        if id.contains(['/', '\\']) || !dir.join(RECORD_FILE).exists() {
            return Err(GatewayError::not_found(format!("unknown session {id:?}")));
        }
        let record: SessionRecord =
            serde_json::from_slice(&fs::read(dir.join(RECORD_FILE))?).map_err(GatewayError::internal)?;
        let csv = fs::read(dir.join(TABLE_FILE))?;
        let table = build_table(parse_csv(&csv, &record.config)?.table, &record);
        let store = KgStore::load(dir.join(STORE_FILE))?;
        let text = fs::read_to_string(dir.join(LOG_FILE))?;
        let log = parse_log(&text)?
            .into_iter()
            .map(|line| match line {
                LogLine::Recorded(d) => Ok(d),
                LogLine::Request(_) => Err(GatewayError::internal(format!("{id}: stored log has an unrecorded line"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut session = Session::replay(id, table, Arc::new(store), record.opened_at.clone(), &log)
            .map_err(|e| GatewayError::internal(format!("{id}: stored log does not replay: {e}")))?;
        if record.finalized {
            session.finalize().map_err(|e| GatewayError::internal(format!("{id}: cannot re-finalize: {e}")))?;
        }
        Ok(Loaded { record, session, dir })
    }

    pub fn save(&self, loaded: &Loaded) -> Result<(), GatewayError> {
        write_atomic(&loaded.dir.join(LOG_FILE), write_log(loaded.session.log()).as_bytes())?;
        let record = serde_json::to_vec_pretty(&loaded.record).map_err(GatewayError::internal)?;
        write_atomic(&loaded.dir.join(RECORD_FILE), &record)
    }
}

fn build_table(mut table: Table, record: &SessionRecord) -> Table {
    table.set_source_id(record.source_id.clone());
    for (k, v) in &record.metadata {
        table.metadata_mut().insert(k.clone(), v.clone());
    }
    table
}

/// Full session state as served to clients: the session view plus pending work.
pub fn session_state(loaded: &Loaded) -> serde_json::Value {
    serde_json::json!({
        "id": loaded.record.id,
        "source_id": loaded.record.source_id,
        "finalized": loaded.is_finalized(),
        "session": loaded.session.view(),
        "pending": loaded.session.pending(),
    })
}
