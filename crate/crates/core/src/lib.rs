//! Core engine for evolving tabular knowledge into a knowledge graph.
//!
//! The pipeline runs CSV import ([`table`]) through machine-proposed,
//! human-decided annotation ([`annotator`], [`session`]) and optional
//! property structuring ([`structurer`]) into stage-4 and stage-5
//! representations ([`evolution`]) backed by an embedded store ([`store`]).

pub mod annotator;
pub mod evolution;
pub mod session;
pub mod store;
pub mod structurer;
pub mod table;
pub mod text;

pub use annotator::CellType;
pub use session::{Decision, DecisionRequest, Session, SessionError};
pub use store::KgStore;
pub use structurer::StructuredModel;
pub use table::{Cell, CsvConfig, Table};
