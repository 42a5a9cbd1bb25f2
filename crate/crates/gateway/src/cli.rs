//! `tabkg` command line. Text output is line-oriented; `--json` prints one
//! [`ApiEnvelope`] per invocation instead.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::error::ErrorKind as ClapErrorKind;
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use tabkg_core::evolution::{classify_stage, read_sidecar, ArtifactDescriptor, StageReport, DEFAULT_BASE};
use tabkg_core::session::Pending;
use tabkg_core::store::CandidateTarget;
use tabkg_core::table::CsvConfig;

use crate::api::{ApiEnvelope, GatewayError};
use crate::http::{parse_delimiter, parse_header_mode, serve, AppState};
use crate::workspace::{load_store, save_store, session_state, ExportFormat, ImportOptions, Loaded, Workspace, ARTIFACT_FILE};

#[derive(Debug, Parser)]
#[command(name = "tabkg", version, about = "Hybrid semantic table annotation")]
struct Cli {
    /// Directory holding the store and sessions.
    #[arg(long, global = true, default_value = ".tabkg")]
    data_dir: PathBuf,
    /// Print machine-readable envelopes.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Open a session on a CSV file and print the column suggestions.
    Import {
        csv: PathBuf,
        /// Store snapshot to annotate against and integrate into.
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        source_id: Option<String>,
        /// Extra metadata, repeatable. Overrides the `<csv>.meta.json` sidecar.
        #[arg(long = "meta", value_name = "KEY=VALUE")]
        meta: Vec<String>,
        /// auto, present or absent.
        #[arg(long, default_value = "auto")]
        header: String,
        #[arg(long, default_value = ",")]
        delimiter: String,
    },
    /// Print everything still waiting on a decision.
    Suggest { session: String },
    /// Apply a decision log file.
    Decide {
        session: String,
        #[arg(long, value_name = "LOG")]
        apply: PathBuf,
    },
    /// Close the session for export.
    Finalize { session: String },
    /// Classify an artifact file along the evolution stages.
    Stage { artifact: PathBuf },
    /// Write the semantic document or the N-Triples of a finalized session.
    Export {
        session: String,
        /// jsonld or ntriples.
        #[arg(long, default_value = "jsonld")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = DEFAULT_BASE)]
        base: String,
    },
    /// Commit a finalized session into its store.
    Integrate {
        session: String,
        #[arg(long, default_value = DEFAULT_BASE)]
        base: String,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = DEFAULT_BASE)]
        base: String,
    },
}

struct Output {
    text: String,
    payload: Value,
}

/// Run with `args` (program name first), writing to `out`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(out, "{}", e.render());
            return match e.kind() {
                ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let json_mode = cli.json;
    let result = dispatch(cli);
    let (line, code) = match result {
        Ok(o) if json_mode => (envelope_line(&ApiEnvelope::ok(o.payload)), 0),
        Ok(o) => (o.text, 0),
        Err(e) if json_mode => (envelope_line(&ApiEnvelope::error(&e)), e.exit_code()),
        Err(e) => (error_text(&e), e.exit_code()),
    };
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    code
}

fn envelope_line(env: &ApiEnvelope) -> String {
    serde_json::to_string(env).expect("envelope serializes") + "\n"
}

fn error_text(e: &GatewayError) -> String {
    let mut s = format!("error: {}: {}\n", e.code, e.message);
    if !e.details.is_null() {
        let _ = writeln!(s, "details: {}", e.details);
    }
    s
}

fn dispatch(cli: Cli) -> Result<Output, GatewayError> {
    if let Command::Stage { artifact } = &cli.command {
        return stage(artifact);
    }
    let ws = Workspace::open(&cli.data_dir)?;
    match cli.command {
        Command::Import { csv, store, source_id, meta, header, delimiter } => {
            let bytes = std::fs::read(&csv)
                .map_err(|e| GatewayError::invalid(format!("cannot read {}: {e}", csv.display())))?;
            let mut metadata = read_sidecar(&csv)?;
            metadata.extend(parse_meta(&meta)?);
            if let Some(p) = &store {
                if !p.exists() {
                    return Err(GatewayError::invalid(format!("store snapshot {} does not exist", p.display())));
                }
            }
            let options = ImportOptions {
                source_id: source_id.or_else(|| csv.file_stem().map(|s| s.to_string_lossy().to_string())),
                metadata,
                config: CsvConfig {
                    header: parse_header_mode(&header)?,
                    delimiter: parse_delimiter(&delimiter)?,
                    ..CsvConfig::default()
                },
                store_path: store,
            };
            let (loaded, warnings) = ws.import(&bytes, options)?;
            let mut text = import_summary(&loaded);
            for w in &warnings {
                let _ = writeln!(text, "warning: line {}: {}", w.line, w.message);
            }
            let mut payload = session_state(&loaded);
            payload["warnings"] = json!(warnings);
            Ok(Output { text, payload })
        }
        Command::Suggest { session } => {
            let loaded = ws.load(&session)?;
            Ok(Output { text: pending_text(&loaded.session.pending()), payload: session_state(&loaded) })
        }
        Command::Decide { session, apply } => {
            let mut loaded = ws.load(&session)?;
            let text = std::fs::read_to_string(&apply)
                .map_err(|e| GatewayError::invalid(format!("cannot read {}: {e}", apply.display())))?;
            let applied = loaded.apply_log(&text)?;
            ws.save(&loaded)?;
            let pending = loaded.session.pending();
            let text = format!(
                "applied {applied} decisions\nphase: {}\n{}",
                phase_name(&loaded),
                pending_counts(&pending)
            );
            Ok(Output { text, payload: json!({ "applied": applied, "state": session_state(&loaded) }) })
        }
        Command::Finalize { session } => {
            let mut loaded = ws.load(&session)?;
            let f = loaded.finalize()?;
            ws.save(&loaded)?;
            let mut text = format!("finalized {}: {} contributions, {} properties\n", f.session, f.contributions, f.properties);
            text.push_str(&report_text(&f.stage_report));
            Ok(Output { text, payload: json!(f) })
        }
        Command::Export { session, format, out, base } => {
            let format: ExportFormat = format.parse()?;
            let loaded = ws.load(&session)?;
            let store = load_store(&loaded.record.store_path)?;
            let bytes = loaded.export(&store, format, &base)?;
            match out {
                Some(path) => {
                    std::fs::write(&path, &bytes)?;
                    Ok(Output {
                        text: format!("wrote {} bytes to {}\n", bytes.len(), path.display()),
                        payload: json!({ "format": format, "path": path, "bytes": bytes.len() }),
                    })
                }
                None => {
                    let content = String::from_utf8(bytes).map_err(GatewayError::internal)?;
                    Ok(Output {
                        payload: json!({ "format": format, "media_type": format.media_type(), "content": content }),
                        text: content,
                    })
                }
            }
        }
        Command::Integrate { session, base } => {
            let loaded = ws.load(&session)?;
            let mut store = load_store(&loaded.record.store_path)?;
            let receipt = loaded.integrate(&mut store, &base)?;
            save_store(&loaded.record.store_path, &store)?;
            let artifact = loaded.dir.join(ARTIFACT_FILE);
            let mut text = format!(
                "entities created: {}\npredicates created: {}\nstatements added: {} of {}\nartifact: {}\n",
                receipt.entities_created.len(),
                receipt.predicates_created.len(),
                receipt.statements_added.len(),
                receipt.statements_total,
                artifact.display()
            );
            text.push_str(&report_text(&receipt.stage_report));
            Ok(Output { text, payload: json!({ "receipt": receipt, "artifact": artifact }) })
        }
        Command::Serve { port, base } => {
            let state = Arc::new(AppState::new(ws, base)?);
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(serve(state, port)).map_err(GatewayError::internal)?;
            Ok(Output { text: String::new(), payload: Value::Null })
        }
        Command::Stage { .. } => unreachable!("handled above"),
    }
}

fn stage(artifact: &std::path::Path) -> Result<Output, GatewayError> {
    let descriptor = ArtifactDescriptor::from_path(artifact)?;
    let report = classify_stage(&descriptor)?;
    Ok(Output { text: report_text(&report), payload: json!(report) })
}

fn report_text(report: &StageReport) -> String {
    let mut s = format!("stage: {}\n", report.achieved_stage);
    for c in &report.criteria {
        let _ = writeln!(s, "{} {} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.stage, c.id, c.evidence);
    }
    s
}

fn phase_name(loaded: &Loaded) -> String {
    serde_json::to_value(loaded.session.phase()).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn target_text(t: &CandidateTarget) -> String {
    match t {
        CandidateTarget::Entity(id) => id.to_string(),
        CandidateTarget::Predicate(id) => id.to_string(),
    }
}

fn import_summary(loaded: &Loaded) -> String {
    let table = loaded.session.table();
    let mut s = format!("session: {}\n", loaded.record.id);
    let _ = writeln!(s, "source: {} ({} rows, {} columns)", loaded.record.source_id, table.height(), table.width());
    for c in loaded.session.columns() {
        let predicate = match &c.chosen_predicate {
            Some(choice) => match &choice.binding {
                tabkg_core::annotator::PredicateBinding::Existing { id } => format!("{id} (machine)"),
                tabkg_core::annotator::PredicateBinding::New { label } => format!("new {label:?}"),
            },
            None if c.predicate_candidates.is_empty() => match &c.create_new {
                Some(label) => format!("pending, propose new {label:?}"),
                None => "pending".to_string(),
            },
            None => format!("pending ({} candidates)", c.predicate_candidates.len()),
        };
        let _ = writeln!(
            s,
            "column {} {:?}: type {}, predicate {}, flags {}",
            c.column,
            c.label,
            c.assigned_type,
            predicate,
            c.unresolved_flags().count()
        );
    }
    s.push_str(&pending_counts(&loaded.session.pending()));
    s
}

fn pending_counts(p: &Pending) -> String {
    format!(
        "pending: {} predicates, {} flags, {} alignments\n",
        p.predicates.len(),
        p.flags.len(),
        p.alignments.len()
    )
}

fn pending_text(p: &Pending) -> String {
    let mut s = pending_counts(p);
    if !p.predicates.is_empty() {
        s.push_str("predicates:\n");
        for q in &p.predicates {
            let mut options: Vec<String> = q
                .candidates
                .iter()
                .map(|c| format!("{} {:?} {:.2}", target_text(&c.target), c.label, c.score))
                .collect();
            if let Some(label) = &q.create_new {
                options.push(format!("new {label:?}"));
            }
            let _ = writeln!(s, "  column {} {:?}: {}", q.column, q.label, options.join("; "));
        }
    }
    if !p.flags.is_empty() {
        s.push_str("flags:\n");
        for f in &p.flags {
            let _ = writeln!(s, "  row {} column {}: found {}, expected {}", f.row, f.column, f.found_type, f.expected_type);
        }
    }
    if !p.alignments.is_empty() {
        s.push_str("alignments:\n");
        for a in &p.alignments {
            let options: Vec<String> = a
                .candidates
                .iter()
                .map(|c| format!("{} {:?} {:.2}", target_text(&c.target), c.label, c.score))
                .collect();
            let options = if options.is_empty() { "no candidates".to_string() } else { options.join("; ") };
            let _ = writeln!(s, "  row {} column {} value {} {:?}: {}", a.row, a.column, a.value_index, a.text, options);
        }
    }
    s
}

/// Metadata flags given as `KEY=VALUE`.
fn parse_meta(pairs: &[String]) -> Result<BTreeMap<String, String>, GatewayError> {
    pairs
        .iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.to_string()))
                .ok_or_else(|| GatewayError::invalid(format!("--meta expects KEY=VALUE, got {kv:?}")))
        })
        .collect()
}
