//! Response envelope and the error type shared by the CLI and HTTP surfaces.

use std::fmt;

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use tabkg_core::evolution::EvolutionError;
use tabkg_core::session::SessionError;
use tabkg_core::store::StoreError;
use tabkg_core::table::TableError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

/// Exactly one of `payload` and `error` is set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiEnvelope {
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl ApiEnvelope {
    pub fn ok(payload: impl Serialize) -> Self {
        let payload = serde_json::to_value(payload).expect("payload serializes");
        Self { status: Status::Ok, payload: Some(payload), error: None }
    }

    pub fn error(e: &GatewayError) -> Self {
        Self {
            status: Status::Error,
            payload: None,
            error: Some(ErrorBody { code: e.code.clone(), message: e.message.clone(), details: e.details.clone() }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input: validation, parse, integrity and replay failures.
    Invalid,
    NotFound,
    /// The request is well-formed but the session's state forbids it.
    Conflict,
    Internal,
}

#[derive(Debug, Error)]
pub struct GatewayError {
    pub kind: ErrorKind,
    pub code: String,
    pub message: String,
    pub details: Value,
}

impl fmt::Display for GatewayError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl GatewayError {
    pub fn new(kind: ErrorKind, code: &str, message: impl Into<String>) -> Self {
        Self { kind, code: code.to_string(), message: message.into(), details: Value::Null }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Invalid, "ValidationError", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::NotFound, "NotFoundError", message)
    }

    pub fn internal(message: impl fmt::Display) -> Self {
        Self::new(ErrorKind::Internal, "InternalError", message.to_string())
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }

    /// Process exit code for the CLI: 1 for user errors, 2 for internal ones.
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Internal => 2,
            _ => 1,
        }
    }
}

impl From<SessionError> for GatewayError {
    fn from(e: SessionError) -> Self {
        let kind = match e {
            SessionError::Phase(_) | SessionError::FinalizeBlocked { .. } => ErrorKind::Conflict,
            _ => ErrorKind::Invalid,
        };
        GatewayError::new(kind, e.code(), e.to_string()).with_details(e.details())
    }
}

impl From<TableError> for GatewayError {
    fn from(e: TableError) -> Self {
        GatewayError::new(ErrorKind::Invalid, e.code(), e.to_string())
    }
}

impl From<StoreError> for GatewayError {
    fn from(e: StoreError) -> Self {
        GatewayError::new(ErrorKind::Invalid, e.code(), e.to_string())
    }
}

impl From<EvolutionError> for GatewayError {
    fn from(e: EvolutionError) -> Self {
        GatewayError::new(ErrorKind::Invalid, e.code(), e.to_string())
    }
}

impl From<std::io::Error> for GatewayError {
    fn from(e: std::io::Error) -> Self {
        GatewayError::internal(e)
    }
}
