//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs without the libtest harness so the lines always print.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::prelude::*;
use support::*;

use tabkg_core::annotator::{infer_column_type, Alignment};
use tabkg_core::evolution::{
    classify_stage, export_statements, export_triples, import_ntriples, integrate, ArtifactDescriptor, DEFAULT_BASE,
};
use tabkg_core::session::{Action, Session};
use tabkg_core::store::{CandidateTarget, ClassRef, ItemKind, KgStore, Origin, DEFAULT_THRESHOLD};
use tabkg_core::structurer::{GroupSpec, HierarchySpec, StructuredModel};
use tabkg_core::table::Table;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn majority_voting() -> Outcome {
    let started = Instant::now();
    let mut rng = rng(0x5eed_0001);
    let mut cells_seen = 0;
    for i in 0..1000 {
        let len = rng.gen_range(1..=50);
        let empty_rate = rng.gen_range(0.0..0.3);
        let kinds: Vec<Kind> = random_column(&mut rng, len)
            .into_iter()
            .map(|k| if rng.gen_bool(empty_rate) { Kind::Empty } else { k })
            .collect();
        let cells: Vec<String> = kinds.iter().map(|k| cell_of(&mut rng, *k)).collect();
        cells_seen += cells.len();
        let inference = infer_column_type(0, &cells).map_err(|e| format!("column {i}: {e}"))?;
        let (winner, flagged) = oracle_vote(&kinds);
        check(inference.inferred == winner, || format!("column {i}: {:?} vs oracle {winner:?}", inference.inferred))?;
        let rows: Vec<usize> = inference.flags.iter().map(|f| f.row).collect();
        check(rows == flagged, || format!("column {i}: flags {rows:?} vs oracle {flagged:?}"))?;
    }
    let elapsed = started.elapsed();
    check(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("1000 columns, {cells_seen} cells, {} ms", elapsed.as_millis()))
}

fn hit_list(hits: &[tabkg_core::store::Candidate]) -> Vec<(u64, String, f64)> {
    hits.iter()
        .map(|c| {
            let id = match c.target {
                CandidateTarget::Entity(id) => id.0,
                CandidateTarget::Predicate(id) => id.0,
            };
            (id, c.label.clone(), c.score)
        })
        .collect()
}

fn candidate_lookup() -> Outcome {
    let mut rng = rng(0x5eed_0002);
    let mut queries = 0;
    let mut hits = 0;
    let place = ClassRef::new("Place");
    for s in 0..10 {
        let ne = if s == 0 { 1000 } else { rng.gen_range(0..=1000) };
        let np = rng.gen_range(0..50);
        let store = random_store(&mut rng, ne, np);
        let labels: Vec<String> = store.entities().map(|e| e.label.clone()).collect();
        let all: Vec<(u64, String)> = store.entities().map(|e| (e.id.0, e.label.clone())).collect();
        let places: Vec<(u64, String)> = store
            .entities()
            .filter(|e| e.class_ref.as_ref() == Some(&place))
            .map(|e| (e.id.0, e.label.clone()))
            .collect();
        let preds: Vec<(u64, String)> = store.predicates().map(|p| (p.id.0, p.label.clone())).collect();
        let plabels: Vec<String> = preds.iter().map(|p| p.1.clone()).collect();
        for _ in 0..25 {
            let limit = rng.gen_range(1..15);
            let q = random_query(&mut rng, &labels);
            let got = hit_list(&store.lookup_candidates(&q, ItemKind::Entity, limit));
            check(got == oracle_lookup(&all, &q, DEFAULT_THRESHOLD, limit), || format!("store {s}: entity query {q:?}"))?;
            hits += got.len();
            let got = hit_list(&store.lookup_entities(&q, Some(&place), limit));
            check(got == oracle_lookup(&places, &q, DEFAULT_THRESHOLD, limit), || format!("store {s}: class query {q:?}"))?;
            let pq = random_query(&mut rng, &plabels);
            let got = hit_list(&store.lookup_candidates(&pq, ItemKind::Predicate, limit));
            check(got == oracle_lookup(&preds, &pq, DEFAULT_THRESHOLD, limit), || format!("store {s}: predicate query {pq:?}"))?;
            queries += 3;
        }
    }
    Ok(format!("{queries} queries over 10 stores, {hits} entity hits"))
}

fn exact_match_safety() -> Outcome {
    let mut machine = 0;
    for trial in 0..10_000u64 {
        let mut rng = rng(0xE7AC_0000 + trial);
        let steps = rng.gen_range(0..20);
        let (_, store, session) = random_session(&mut rng, steps);
        for c in session.columns() {
            if let Some(choice) = c.chosen_predicate.as_ref().filter(|p| p.origin == Origin::Machine) {
                check(choice.score == Some(1.0), || format!("trial {trial}: column {} machine score {:?}", c.column, choice.score))?;
                machine += 1;
            }
        }
        for cell in session.cell_annotations() {
            for v in cell.values.iter().filter(|v| v.alignment_origin == Some(Origin::Machine)) {
                let Some(Alignment::Entity { id }) = &v.alignment else {
                    return Err(format!("trial {trial}: machine alignment without an entity"));
                };
                let score = v.candidates.iter().find(|c| c.target == CandidateTarget::Entity(*id)).map(|c| c.score);
                check(score == Some(1.0), || format!("trial {trial}: {:?} machine-aligned at {score:?}", v.text))?;
                let label = &store.entity(*id).expect("aligned entity").label;
                check(oracle_normalize(label) == oracle_normalize(&v.text), || format!("trial {trial}: {:?} vs {label:?}", v.text))?;
                machine += 1;
            }
        }
        for d in session.log().iter().filter(|d| d.actor == Origin::Machine) {
            if let Action::AcceptPredicate { column, predicate } = &d.action {
                let header = &session.table().header()[*column].raw_label;
                let label = &store.predicate(*predicate).expect("predicate").label;
                check(oracle_normalize(header) == oracle_normalize(label), || format!("trial {trial}: {header:?} -> {label:?}"))?;
            }
        }
    }
    check(machine > 1000, || format!("only {machine} machine choices exercised"))?;
    Ok(format!("10000 trials, {machine} machine choices all exact"))
}

fn replay_determinism() -> Outcome {
    let mut decisions = 0;
    for trial in 0..150u64 {
        let mut rng = rng(0x4E91_0000 + trial);
        let steps = rng.gen_range(1..40);
        let (table, store, session) = random_session(&mut rng, steps);
        decisions += session.log().len();
        let replayed = Session::replay("s1", table, store, OPENED_AT, session.log()).map_err(|e| format!("trial {trial}: {e}"))?;
        check(replayed == session, || format!("trial {trial}: replayed state differs"))?;
        check(replayed.preview().ok() == session.preview().ok(), || format!("trial {trial}: preview differs"))?;
    }
    Ok(format!("150 sequences, {decisions} decisions replayed"))
}

fn structural_conservation() -> Outcome {
    let mut groups = 0;
    for trial in 0..500u64 {
        let mut rng = rng(0xC0A5_0000 + trial);
        let (w, h) = (rng.gen_range(2..8), rng.gen_range(1..6));
        let table = random_typed_table(&mut rng, w, h);
        let labels: Vec<String> = table.header().iter().map(|h| h.raw_label.clone()).collect();
        let (hierarchy, group) = random_structure(&mut rng, &labels);
        let mut model = StructuredModel::from_table(&table)
            .apply_hierarchy(&hierarchy)
            .map_err(|e| format!("trial {trial}: {e}"))?;
        if let Some(g) = &group {
            model = model.apply_grouping(g, &KgStore::new()).map_err(|e| format!("trial {trial}: {e}"))?;
            groups += 1;
        }
        for row in 0..table.height() {
            check(model_leaves(&model, row) == source_leaves(&table, row), || format!("trial {trial}: row {row} leaves differ"))?;
        }
    }
    Ok(format!("500 trials ({groups} with a group), leaves conserved"))
}

fn stage_classifier() -> Outcome {
    let dir = fixtures().join("stages");
    let corpus = [
        ("stage1.pdf", 1),
        ("stage2.xlsx", 2),
        ("stage3.csv", 3),
        ("stage4.jsonld", 4),
        ("stage5/stage5.artifact.json", 5),
    ];
    let mut got = Vec::new();
    for (file, expected) in corpus {
        let desc = ArtifactDescriptor::from_path(&dir.join(file)).map_err(|e| format!("{file}: {e}"))?;
        let report = classify_stage(&desc).map_err(|e| format!("{file}: {e}"))?;
        check(report.achieved_stage == expected, || format!("{file}: stage {} expected {expected}", report.achieved_stage))?;
        check(report.is_cumulative(), || format!("{file}: not cumulative"))?;
        got.push(report.achieved_stage.to_string());
    }
    Ok(format!("corpus classified as {}, cumulative", got.join(",")))
}

/// Lines the counting rule predicts from the table and specs alone: per row
/// one type triple, one per filled cell, one per parent node with a filled
/// descendant, and two for a live group node.
fn expected_lines(table: &Table, hierarchy: &HierarchySpec, group: Option<&GroupSpec>) -> usize {
    let col = |label: &str| table.header().iter().position(|h| h.raw_label == label).unwrap();
    let filled = |row: usize, c: usize| !table.rows()[row][c].is_empty();
    let descendants = |root: usize| {
        let mut out = HashSet::new();
        let mut stack = vec![root];
        while let Some(p) = stack.pop() {
            for e in &hierarchy.edges {
                let child = col(&e.child);
                if col(&e.parent) == p && out.insert(child) {
                    stack.push(child);
                }
            }
        }
        out
    };
    let parents: HashSet<usize> = hierarchy.edges.iter().map(|e| col(&e.parent)).collect();
    let mut n = 0;
    for row in 0..table.height() {
        n += 1 + (0..table.width()).filter(|c| filled(row, *c)).count();
        n += parents.iter().filter(|p| descendants(**p).iter().any(|c| filled(row, *c))).count();
        if let Some(g) = group {
            let live = g.members.iter().any(|m| {
                let c = col(m);
                filled(row, c) || descendants(c).iter().any(|d| filled(row, *d))
            });
            if live {
                n += 2;
            }
        }
    }
    n
}

fn fixed_point(model: &StructuredModel, store: &mut KgStore) -> Result<Vec<u8>, String> {
    let nt = export_triples(model, store, DEFAULT_BASE).map_err(|e| e.to_string())?;
    integrate(model, store, DEFAULT_BASE).map_err(|e| e.to_string())?;
    let mut copy = store.clone();
    let ids = import_ntriples(&nt, &mut copy).map_err(|e| e.to_string())?;
    check(copy == *store, || "import changed an integrated store".into())?;
    check(export_statements(&copy, &ids, DEFAULT_BASE) == nt, || "re-export differs".into())?;
    check(export_triples(model, &copy, DEFAULT_BASE).map_err(|e| e.to_string())? == nt, || "second export differs".into())?;
    Ok(nt)
}

fn serialization_fixed_point() -> Outcome {
    let mut store = KgStore::new();
    let de = store.upsert_entity("Germany", None, Origin::Human).map_err(|e| e.to_string())?;
    let fr = store.upsert_entity("France", None, Origin::Human).map_err(|e| e.to_string())?;
    let t = Table::from_strings("t", &["country", "year", "method"], &[&["Germany", "2020", "a"], &["France", "2021", "b"]])
        .map_err(|e| e.to_string())?;
    let mut model = StructuredModel::from_table(&t);
    model.metadata.insert("doi".into(), "10.1234/abcd".into());
    for (row, id) in [de, fr].into_iter().enumerate() {
        model.contributions[row].values[0][0].object = Alignment::Entity { id };
    }
    for p in &mut model.properties {
        p.confirmed = true;
    }
    let oracle = expected_lines(&t, &HierarchySpec::default(), None);
    let nt = fixed_point(&model, &mut store).map_err(|e| format!("2x3: {e}"))?;
    let lines = String::from_utf8_lossy(&nt).lines().count();
    check(oracle == 8 && lines == 8, || format!("2x3 fixture: {lines} lines, oracle {oracle}"))?;

    for trial in 0..200u64 {
        let mut rng = rng(0xF1C5_0000 + trial);
        let (w, h) = (rng.gen_range(1..6), rng.gen_range(1..5));
        let table = random_typed_table(&mut rng, w, h);
        let labels: Vec<String> = table.header().iter().map(|h| h.raw_label.clone()).collect();
        let (hierarchy, group) = random_structure(&mut rng, &labels);
        let mut store = KgStore::new();
        let mut model = StructuredModel::from_table(&table).apply_hierarchy(&hierarchy).map_err(|e| e.to_string())?;
        if let Some(g) = &group {
            model = model.apply_grouping(g, &store).map_err(|e| e.to_string())?;
        }
        let nt = fixed_point(&model, &mut store).map_err(|e| format!("trial {trial}: {e}"))?;
        let lines = String::from_utf8_lossy(&nt).lines().count();
        let oracle = expected_lines(&table, &hierarchy, group.as_ref());
        check(lines == oracle, || format!("trial {trial}: {lines} lines, oracle {oracle}"))?;
    }
    Ok("2x3 fixture gives 8 lines; 201 fixtures byte-identical after import".into())
}

fn run_cli(data: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tabkg"))
        .arg("--data-dir")
        .arg(data)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    check(out.status.success(), || format!("tabkg {}: {}", args.join(" "), text.trim()))?;
    Ok(text)
}

fn desk_scenario() -> Outcome {
    let fx = fixtures();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path();
    std::fs::copy(fx.join("seed.snapshot"), data.join("store.snapshot")).map_err(|e| e.to_string())?;
    let csv = fx.join("desk.csv");
    let log = fx.join("desk.decisions.jsonl");
    let started = Instant::now();
    run_cli(data, &["import", csv.to_str().unwrap(), "--header", "present"])?;
    run_cli(data, &["decide", "s1", "--apply", log.to_str().unwrap()])?;
    let finalized = run_cli(data, &["finalize", "s1"])?;
    check(finalized.contains("stage: 4\n"), || format!("finalize reported {finalized:?}"))?;
    let doc = data.join("export.jsonld");
    run_cli(data, &["export", "s1", "--format", "jsonld", "--out", doc.to_str().unwrap()])?;
    run_cli(data, &["integrate", "s1"])?;
    let artifact = data.join("sessions/s1/integrated.artifact.json");
    let report = run_cli(data, &["stage", artifact.to_str().unwrap()])?;
    let elapsed = started.elapsed();
    check(report.starts_with("stage: 5\n"), || format!("final report {report:?}"))?;
    check(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    let linked = report
        .lines()
        .find(|l| l.contains("s4.alignment"))
        .and_then(|l| l.split(", ").nth(1))
        .unwrap_or("?")
        .to_string();
    Ok(format!("CLI import to integrate in {} ms, stage 5, {linked}", elapsed.as_millis()))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("majority voting oracle", majority_voting),
        ("candidate lookup oracle", candidate_lookup),
        ("exact-match safety", exact_match_safety),
        ("replay determinism", replay_determinism),
        ("structural conservation", structural_conservation),
        ("stage classifier corpus", stage_classifier),
        ("serialization fixed point", serialization_fixed_point),
        ("desk-scale scenario", desk_scenario),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
