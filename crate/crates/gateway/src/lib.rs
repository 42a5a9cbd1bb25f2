//! CLI and HTTP front ends over `tabkg-core`. Sessions persist as the
//! uploaded table plus their decision log and are rebuilt by replay.

pub mod api;
pub mod cli;
pub mod http;
pub mod workspace;

pub use api::{ApiEnvelope, GatewayError};
pub use http::{router, AppState};
pub use workspace::Workspace;
