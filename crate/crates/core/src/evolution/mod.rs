//! Stage classification and the stage-4 / stage-5 exporters.

mod document;
mod ground;
mod ntriples;
mod stage;

use serde::Serialize;
use thiserror::Error;

use crate::store::{EntityId, KgStore, PredicateId, StatementId};
use crate::structurer::StructuredModel;

pub use self::document::{export_semantic_doc, RDFS_LABEL};
pub use self::ground::{
    contribution_label, ground, Grounding, CLASS_CLASS, CONTRIBUTION_CLASS, INSTANCE_OF, NODE_CLASS,
};
pub use self::ntriples::{
    datatype_iri, entity_iri, export_statements, import_ntriples, parse_ntriples, predicate_iri, ParsedTriple, XSD,
};
pub use self::stage::{
    classify_stage, read_sidecar, ArtifactDescriptor, ArtifactKind, Criterion, Payload, Source, StageReport,
};

/// Namespace used when no base is configured.
pub const DEFAULT_BASE: &str = "http://example.org/tabkg/";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvolutionError {
    #[error("{0}")]
    Integrity(String),
    #[error("{0}")]
    Validation(String),
    #[error("cannot classify artifact: {0}")]
    Classify(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl EvolutionError {
    pub fn code(&self) -> &'static str {
        match self {
            EvolutionError::Integrity(_) => "IntegrityError",
            EvolutionError::Validation(_) | EvolutionError::Parse { .. } => "ValidationError",
            EvolutionError::Classify(_) => "ClassifyError",
        }
    }
}

/// Canonical N-Triples for the model, as integration would write it into
/// `store`. The store itself is not modified.
pub fn export_triples(model: &StructuredModel, store: &KgStore, base: &str) -> Result<Vec<u8>, EvolutionError> {
    let mut scratch = store.clone();
    let g = ground(model, &mut scratch)?;
    Ok(export_statements(&scratch, &g.statements, base))
}

/// Stage report of the model's semantic document before integration.
pub fn document_stage(model: &StructuredModel, store: &KgStore, base: &str) -> Result<StageReport, EvolutionError> {
    let document = export_semantic_doc(model, store, base);
    let descriptor = ArtifactDescriptor::new(
        Payload::SemanticDoc { source: Source::Inline(String::from_utf8(document).expect("utf-8 document")) },
        model.metadata.clone(),
    );
    classify_stage(&descriptor)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IntegrationReceipt {
    pub entities_created: Vec<EntityId>,
    pub predicates_created: Vec<PredicateId>,
    pub statements_added: Vec<StatementId>,
    /// All statements the model maps to, including ones already present.
    pub statements_total: usize,
    pub stage_report: StageReport,
}

/// Commit the model into the store. Idempotent: a second call adds nothing.
pub fn integrate(model: &StructuredModel, store: &mut KgStore, base: &str) -> Result<IntegrationReceipt, EvolutionError> {
    let g = ground(model, store)?;
    let document = export_semantic_doc(model, store, base);
    let triples = export_statements(store, &g.statements, base);
    let descriptor = ArtifactDescriptor::new(
        Payload::KgIntegrated {
            document: Source::Inline(String::from_utf8(document).expect("utf-8 document")),
            triples: Source::Inline(String::from_utf8(triples).expect("utf-8 triples")),
            store: Source::Inline(String::from_utf8(store.to_snapshot_bytes()).expect("utf-8 snapshot")),
        },
        model.metadata.clone(),
    );
    Ok(IntegrationReceipt {
        entities_created: g.entities_created,
        predicates_created: g.predicates_created,
        statements_added: g.statements_added,
        statements_total: g.statements.len(),
        stage_report: classify_stage(&descriptor)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotator::{Alignment, CellType, PredicateBinding};
    use crate::store::{ClassRef, Origin};
    use crate::structurer::{GroupSpec, HierarchyEdge, HierarchySpec};
    use crate::table::Table;

    fn meta_model(table: &Table) -> StructuredModel {
        let mut m = StructuredModel::from_table(table);
        m.metadata.insert("doi".into(), "10.1234/abcd".into());
        m.metadata.insert("title".into(), "A table".into());
        m.metadata.insert("author".into(), "Someone".into());
        m
    }

    fn two_by_three() -> (StructuredModel, KgStore) {
        let mut store = KgStore::new();
        let de = store.upsert_entity("Germany", None, Origin::Human).unwrap();
        let fr = store.upsert_entity("France", None, Origin::Human).unwrap();
        let t = Table::from_strings("t", &["country", "year", "method"], &[&["Germany", "2020", "a"], &["France", "2021", "b"]])
            .unwrap();
        let mut m = meta_model(&t);
        for (c, id) in [de, fr].into_iter().enumerate() {
            m.contributions[c].values[0][0].object = Alignment::Entity { id };
        }
        for p in &mut m.properties {
            p.confirmed = true;
        }
        (m, store)
    }

    #[test]
    fn two_by_three_gives_eight_lines() {
        let (m, store) = two_by_three();
        let nt = export_triples(&m, &store, DEFAULT_BASE).unwrap();
        assert_eq!(String::from_utf8(nt).unwrap().lines().count(), 8);
        assert_eq!(store.statement_count(), 0);
    }

    #[test]
    fn empty_model_exports_nothing() {
        let t = Table::from_strings("t", &["a"], &[]).unwrap();
        let m = StructuredModel::from_table(&t);
        assert!(export_triples(&m, &KgStore::new(), DEFAULT_BASE).unwrap().is_empty());
        let doc: serde_json::Value = serde_json::from_slice(&export_semantic_doc(&m, &KgStore::new(), DEFAULT_BASE)).unwrap();
        assert_eq!(doc["@graph"].as_array().unwrap().len(), 0);
        assert_eq!(doc["schema"]["properties"].as_array().unwrap().len(), 1);
    }

    #[test]
    fn integrate_is_idempotent_and_reaches_five() {
        let (m, mut store) = two_by_three();
        let nt = export_triples(&m, &store, DEFAULT_BASE).unwrap();
        let r = integrate(&m, &mut store, DEFAULT_BASE).unwrap();
        assert_eq!(r.statements_added.len(), 8);
        assert_eq!(r.stage_report.achieved_stage, 5, "{:#?}", r.stage_report);
        let again = integrate(&m, &mut store, DEFAULT_BASE).unwrap();
        assert!(again.statements_added.is_empty() && again.entities_created.is_empty());
        assert_eq!(export_triples(&m, &store, DEFAULT_BASE).unwrap(), nt);
        let ids = import_ntriples(&nt, &mut store).unwrap();
        assert_eq!(export_statements(&store, &ids, DEFAULT_BASE), nt);
    }

    #[test]
    fn finalized_document_is_stage_four() {
        let (m, store) = two_by_three();
        assert_eq!(document_stage(&m, &store, DEFAULT_BASE).unwrap().achieved_stage, 4);
    }

    #[test]
    fn deleted_entity_is_integrity_error() {
        let (m, mut store) = two_by_three();
        let de = store.find_entity("Germany", None).unwrap();
        store.remove_entity(de).unwrap();
        let before = store.clone();
        assert_eq!(integrate(&m, &mut store, DEFAULT_BASE).unwrap_err().code(), "IntegrityError");
        assert_eq!(store, before);
    }

    #[test]
    fn structure_counting_rule() {
        let t = Table::from_strings(
            "t",
            &["metrics", "precision", "recall", "city", "country"],
            &[&["m", "0.9", "0.8", "Berlin", "Germany"], &["", "0.7", "", "", ""]],
        )
        .unwrap();
        let m = meta_model(&t)
            .apply_hierarchy(&HierarchySpec {
                edges: vec![HierarchyEdge::new("metrics", "precision"), HierarchyEdge::new("metrics", "recall")],
            })
            .unwrap()
            .apply_grouping(&GroupSpec { group_label: "location".into(), members: vec!["city".into(), "country".into()] }, &KgStore::new())
            .unwrap();
        // leaves 5 + 1, contributions 2, one metrics node per row, one group instance
        let nt = export_triples(&m, &KgStore::new(), DEFAULT_BASE).unwrap();
        assert_eq!(String::from_utf8(nt).unwrap().lines().count(), 6 + 2 + 2 + 2);
    }

    #[test]
    fn document_nests_groups() {
        let t = Table::from_strings("t", &["study", "city", "country"], &[&["p", "Berlin", "Germany"]]).unwrap();
        let mut m = meta_model(&t)
            .apply_grouping(&GroupSpec { group_label: "location".into(), members: vec!["city".into(), "country".into()] }, &KgStore::new())
            .unwrap();
        m.contributions[0].values[1][0].object =
            Alignment::NewEntity { label: "Berlin".into(), class_ref: Some(ClassRef::new("City")) };
        m.properties[0].predicate = PredicateBinding::New { label: "study".into() };
        let doc: serde_json::Value = serde_json::from_slice(&export_semantic_doc(&m, &KgStore::new(), DEFAULT_BASE)).unwrap();
        let node = &doc["@graph"][0];
        assert_eq!(node["location"][0]["city"][0]["label"], "Berlin");
        assert_eq!(node["location"][0]["country"][0]["@value"], "Germany");
        assert_eq!(doc["schema"]["structure"][1]["group"], "location");
        assert_eq!(doc["schema"]["properties"][1]["linked_values"], 1);
        assert_eq!(doc["schema"]["properties"][0]["datatype"], serde_json::json!(CellType::String));
    }
}
