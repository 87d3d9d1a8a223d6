//! Evidence store: keeps payloads of any format and mints references
//! (`url` + `access_key` + `content_hash`) small enough to record on a chain.
//!
//! HTTP surface:
//!
//! * `POST /resources`: raw body, `x-media-hint`, `authorization: Bearer <token>` → [`ResourceRef`]
//! * `GET /resources/{id}`: `x-access-key` → payload, `x-media-hint`
//! * `DELETE /resources/{id}`: `x-access-key` + `authorization` → `{"deleted": id}`
//! * `GET /health`
//!
//! Header values are percent-encoded so that any hint string survives.

mod client;
mod server;
mod store;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

pub use client::{fetch_ref, ResourcesClient};
pub use server::{spawn_store, StoreConfig, StoreHandle};
pub use store::ResourceStore;

use crate::ledger::{Digest, Timestamp};
use crate::net::ErrorBody;

pub const MEDIA_HINT_HEADER: &str = "x-media-hint";
pub const ACCESS_KEY_HEADER: &str = "x-access-key";

/// Payloads above this are refused by the HTTP layer.
pub const MAX_PAYLOAD_BYTES: usize = 64 * 1024 * 1024;

/// Locator for one stored payload. `url` names the owning store.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceRef {
    pub url: String,
    pub access_key: String,
    pub content_hash: Digest,
    pub media_hint: String,
}

impl ResourceRef {
    /// The trailing path segment of `url`.
    pub fn resource_id(&self) -> Option<&str> {
        self.url.rsplit_once("/resources/").map(|(_, id)| id).filter(|id| !id.is_empty())
    }
}

/// What a store keeps per resource.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvidenceEnvelope {
    pub resource_id: String,
    pub access_key: String,
    pub media_hint: String,
    pub payload: Vec<u8>,
    pub stored_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ResourceError {
    #[error("caller not authorized on this store: {0}")]
    Unauthorized(String),
    #[error("access key rejected for {0}")]
    WrongKey(String),
    #[error("unknown resource {0}")]
    NotFound(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("store I/O failure: {0}")]
    Io(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("content hash mismatch for {url}: expected {expected}, got {actual}")]
    Integrity {
        url: String,
        expected: Digest,
        actual: Digest,
    },
}

impl ResourceError {
    pub fn code(&self) -> &'static str {
        match self {
            ResourceError::Unauthorized(_) => "unauthorized",
            ResourceError::WrongKey(_) => "permission",
            ResourceError::NotFound(_) => "not_found",
            ResourceError::Invalid(_) => "invalid",
            ResourceError::Io(_) => "io",
            ResourceError::Transport(_) => "transport",
            ResourceError::Integrity { .. } => "integrity",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ResourceError::Unauthorized(_) => StatusCode::UNAUTHORIZED,
            ResourceError::WrongKey(_) => StatusCode::FORBIDDEN,
            ResourceError::NotFound(_) => StatusCode::NOT_FOUND,
            ResourceError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ResourceError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            ResourceError::Transport(_) | ResourceError::Integrity { .. } => StatusCode::BAD_GATEWAY,
        }
    }

    fn from_wire(status: StatusCode, body: Option<ErrorBody>) -> Self {
        let message = body.map(|b| b.message).unwrap_or_else(|| status.to_string());
        match status {
            StatusCode::UNAUTHORIZED => ResourceError::Unauthorized(message),
            StatusCode::FORBIDDEN => ResourceError::WrongKey(message),
            StatusCode::NOT_FOUND => ResourceError::NotFound(message),
            StatusCode::UNPROCESSABLE_ENTITY | StatusCode::PAYLOAD_TOO_LARGE | StatusCode::BAD_REQUEST => {
                ResourceError::Invalid(message)
            }
            StatusCode::INTERNAL_SERVER_ERROR => ResourceError::Io(message),
            _ => ResourceError::Transport(format!("HTTP {status}: {message}")),
        }
    }
}

impl IntoResponse for ResourceError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code().into(),
            message: self.to_string(),
        };
        (self.status(), Json(body)).into_response()
    }
}
