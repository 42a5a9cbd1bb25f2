//! JSON-over-HTTP API. Every response body is an [`ApiEnvelope`].
//!
//! | method | path | payload |
//! |--------|------|---------|
//! | POST | `/sessions` | multipart `file` (CSV), optional `source_id`, `header`, `delimiter`, `metadata` (JSON object); 201 with the session state |
//! | GET | `/sessions/{id}` | session state: annotations, flags, pending work, decisions |
//! | POST | `/sessions/{id}/decisions` | one decision request; returns the applied decisions and changed annotations |
//! | GET | `/sessions/{id}/candidates?row&col` | entity candidates for one cell |
//! | POST | `/sessions/{id}/finalize` | counts and the semantic document's stage report |
//! | GET | `/sessions/{id}/export?format=jsonld\|ntriples[&base]` | `{format, media_type, content}` |
//! | POST | `/sessions/{id}/integrate` | integration receipt |
//! | GET | `/store/search?q&kind=entity\|predicate[&class][&limit]` | ranked candidates |
//! | GET | `/healthz` | liveness |
//!
//! Status codes: 400 invalid input, 404 unknown ids, 409 phase conflicts and
//! blocked finalization, 500 internal errors. The error code is the engine's
//! error code verbatim.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Multipart, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;

use tabkg_core::store::{ClassRef, ItemKind, KgStore};
use tabkg_core::table::{CsvConfig, HeaderMode};
use tabkg_core::DecisionRequest;

use crate::api::{ApiEnvelope, ErrorKind, GatewayError};
use crate::workspace::{load_store, save_store, session_state, ExportFormat, ImportOptions, Loaded, SessionRecord, Workspace};

pub struct AppState {
    workspace: Workspace,
    base: String,
    /// The data directory's store; also the lock serializing every store write.
    store: RwLock<KgStore>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Loaded>>>>,
}

impl AppState {
    pub fn new(workspace: Workspace, base: impl Into<String>) -> Result<Self, GatewayError> {
        let store = load_store(&workspace.store_path())?;
        Ok(Self { workspace, base: base.into(), store: RwLock::new(store), sessions: Mutex::new(HashMap::new()) })
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Loaded>>, GatewayError> {
        let mut sessions = self.sessions.lock().expect("session table lock");
        if let Some(s) = sessions.get(id) {
            return Ok(s.clone());
        }
        let loaded = Arc::new(Mutex::new(self.workspace.load(id)?));
        sessions.insert(id.to_string(), loaded.clone());
        Ok(loaded)
    }

    /// Current state of the store a session integrates into.
    fn target_store(&self, record: &SessionRecord) -> Result<KgStore, GatewayError> {
        let shared = self.store.read().expect("store lock");
        if record.store_path == self.workspace.store_path() {
            Ok(shared.clone())
        } else {
            load_store(&record.store_path)
        }
    }

    /// Run `f` on a copy of the session's target store and persist the copy
    /// only when `f` succeeds.
    fn write_target_store<R>(
        &self,
        record: &SessionRecord,
        f: impl FnOnce(&mut KgStore) -> Result<R, GatewayError>,
    ) -> Result<R, GatewayError> {
        let mut shared = self.store.write().expect("store lock");
        let own = record.store_path == self.workspace.store_path();
        let mut next = if own { shared.clone() } else { load_store(&record.store_path)? };
        let out = f(&mut next)?;
        save_store(&record.store_path, &next)?;
        if own {
            *shared = next;
        }
        Ok(out)
    }
}

pub type Shared = Arc<AppState>;

impl IntoResponse for GatewayError {
    fn into_response(self) -> Response {
        let status = match self.kind {
            ErrorKind::Invalid => StatusCode::BAD_REQUEST,
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Conflict => StatusCode::CONFLICT,
            ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(ApiEnvelope::error(&self))).into_response()
    }
}

type ApiResult = Result<Response, GatewayError>;

fn ok(status: StatusCode, payload: impl Serialize) -> ApiResult {
    Ok((status, Json(ApiEnvelope::ok(payload))).into_response())
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/decisions", post(post_decision))
        .route("/sessions/{id}/candidates", get(get_candidates))
        .route("/sessions/{id}/finalize", post(finalize))
        .route("/sessions/{id}/export", get(export))
        .route("/sessions/{id}/integrate", post(integrate))
        .route("/store/search", get(search))
        .fallback(|| async { GatewayError::not_found("no such route").into_response() })
        .with_state(state)
}

async fn healthz() -> ApiResult {
    ok(StatusCode::OK, json!({ "healthy": true }))
}

fn text_field(name: &str, bytes: &[u8]) -> Result<String, GatewayError> {
    String::from_utf8(bytes.to_vec()).map_err(|_| GatewayError::invalid(format!("field {name:?} is not UTF-8")))
}

async fn create_session(State(state): State<Shared>, mut multipart: Multipart) -> ApiResult {
    let mut csv = None;
    let mut options = ImportOptions::default();
    let mut file_stem = None;
    while let Some(field) = multipart.next_field().await.map_err(|e| GatewayError::invalid(e.body_text()))? {
        let name = field.name().unwrap_or_default().to_string();
        if name == "file" {
            file_stem = field
                .file_name()
                .map(|f| std::path::Path::new(f).file_stem().unwrap_or_default().to_string_lossy().to_string());
        }
        let bytes = field.bytes().await.map_err(|e| GatewayError::invalid(e.body_text()))?;
        match name.as_str() {
            "file" => csv = Some(bytes),
            "source_id" => options.source_id = Some(text_field(&name, &bytes)?),
            "header" => options.config.header = parse_header_mode(&text_field(&name, &bytes)?)?,
            "delimiter" => options.config.delimiter = parse_delimiter(&text_field(&name, &bytes)?)?,
            "metadata" => {
                options.metadata = serde_json::from_slice::<BTreeMap<String, String>>(&bytes)
                    .map_err(|e| GatewayError::invalid(format!("metadata must be a JSON object of strings: {e}")))?
            }
            other => return Err(GatewayError::invalid(format!("unexpected multipart field {other:?}"))),
        }
    }
    let csv = csv.ok_or_else(|| GatewayError::invalid("multipart field \"file\" is required"))?;
    if options.source_id.is_none() {
        options.source_id = file_stem.filter(|s| !s.is_empty());
    }
    let store = state.store.read().expect("store lock").clone();
    let (loaded, warnings) = state.workspace.import_with_store(&csv, options, state.workspace.store_path(), store)?;
    let mut payload = session_state(&loaded);
    payload["warnings"] = json!(warnings);
    let id = loaded.record.id.clone();
    state.sessions.lock().expect("session table lock").insert(id, Arc::new(Mutex::new(loaded)));
    ok(StatusCode::CREATED, payload)
}

pub fn parse_header_mode(s: &str) -> Result<HeaderMode, GatewayError> {
    match s {
        "auto" => Ok(HeaderMode::Auto),
        "present" => Ok(HeaderMode::Present),
        "absent" => Ok(HeaderMode::Absent),
        other => Err(GatewayError::invalid(format!("header must be auto, present or absent, got {other:?}"))),
    }
}

pub fn parse_delimiter(s: &str) -> Result<char, GatewayError> {
    let s = if s == "\\t" { "\t" } else { s };
    let mut chars = s.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c != CsvConfig::default().quote && c != '\n' && c != '\r' => Ok(c),
        _ => Err(GatewayError::invalid(format!("delimiter must be one character, got {s:?}"))),
    }
}

async fn get_session(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let session = state.session(&id)?;
    let loaded = session.lock().expect("session lock");
    ok(StatusCode::OK, session_state(&loaded))
}

async fn post_decision(State(state): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let request: DecisionRequest =
        serde_json::from_slice(&body).map_err(|e| GatewayError::invalid(format!("bad decision: {e}")))?;
    let session = state.session(&id)?;
    let mut loaded = session.lock().expect("session lock");
    let applied = loaded.apply(request)?;
    state.workspace.save(&loaded)?;
    ok(StatusCode::OK, applied)
}

fn usize_param(params: &HashMap<String, String>, name: &str) -> Result<usize, GatewayError> {
    let raw = params.get(name).ok_or_else(|| GatewayError::invalid(format!("query parameter {name:?} is required")))?;
    raw.parse().map_err(|_| GatewayError::invalid(format!("query parameter {name:?} must be a non-negative integer")))
}

async fn get_candidates(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult {
    let (row, col) = (usize_param(&params, "row")?, usize_param(&params, "col")?);
    let session = state.session(&id)?;
    let loaded = session.lock().expect("session lock");
    ok(StatusCode::OK, loaded.session.candidates(row, col)?)
}

async fn finalize(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let session = state.session(&id)?;
    let mut loaded = session.lock().expect("session lock");
    let finalized = loaded.finalize()?;
    state.workspace.save(&loaded)?;
    ok(StatusCode::OK, finalized)
}

async fn export(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult {
    let format: ExportFormat = params.get("format").map(String::as_str).unwrap_or("jsonld").parse()?;
    let base = params.get("base").cloned().unwrap_or_else(|| state.base.clone());
    let session = state.session(&id)?;
    let loaded = session.lock().expect("session lock");
    let store = state.target_store(&loaded.record)?;
    let bytes = loaded.export(&store, format, &base)?;
    let content = String::from_utf8(bytes).map_err(GatewayError::internal)?;
    ok(StatusCode::OK, json!({ "format": format, "media_type": format.media_type(), "content": content }))
}

async fn integrate(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let session = state.session(&id)?;
    let loaded = session.lock().expect("session lock");
    let base = state.base.clone();
    let receipt = state.write_target_store(&loaded.record, |store| loaded.integrate(store, &base))?;
    ok(StatusCode::OK, receipt)
}

async fn search(State(state): State<Shared>, Query(params): Query<HashMap<String, String>>) -> ApiResult {
    let q = params.get("q").ok_or_else(|| GatewayError::invalid("query parameter \"q\" is required"))?;
    let kind = match params.get("kind").map(String::as_str).unwrap_or("entity") {
        "entity" => ItemKind::Entity,
        "predicate" => ItemKind::Predicate,
        other => return Err(GatewayError::invalid(format!("kind must be entity or predicate, got {other:?}"))),
    };
    let limit = match params.get("limit") {
        Some(_) => usize_param(&params, "limit")?,
        None => 10,
    };
    let store = state.store.read().expect("store lock");
    let candidates = match (kind, params.get("class")) {
        (ItemKind::Entity, Some(class)) => store.lookup_entities(q, Some(&ClassRef::new(class.as_str())), limit),
        _ => store.lookup_candidates(q, kind, limit),
    };
    ok(StatusCode::OK, json!({ "query": q, "kind": kind, "candidates": candidates }))
}

/// Bind and serve until interrupted.
pub async fn serve(state: Shared, port: u16) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    println!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
