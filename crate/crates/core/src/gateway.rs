//! The connector as a shared REST service.
//!
//! | method | path                             | connector operation          |
//! |--------|----------------------------------|------------------------------|
//! | GET    | `/trajectory/{patient_id}`       | `get_trajectory`             |
//! | GET    | `/trajectory/{patient_id}/current` | `current_view`             |
//! | POST   | `/references`                    | `add_reference`              |
//! | GET    | `/evidence/{height}?patient_id=` | `entry_at` + `fetch_evidence` |
//! | GET    | `/health`                        | target probe (no token)      |
//!
//! Every route but `/health` needs `authorization: Bearer <token>` when
//! tokens are configured.

use std::path::Path as FsPath;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use subtle::ConstantTimeEq;

use crate::connector::{Connector, ConnectorConfig, ConnectorConfigFile, ConnectorError, ConnectorMode, CurrentView, TrajectoryEntry};
use crate::ledger::{Block, Digest, TxKind};
use crate::net::{bind, encode_path, Endpoint, ErrorBody, ServerHandle};
use crate::resources::{ResourceRef, MEDIA_HINT_HEADER};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub bind_endpoint: Endpoint,
    pub connector: ConnectorConfig,
    /// May be empty only on a loopback bind.
    pub auth_tokens: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GatewayConfigFile {
    pub bind_endpoint: Endpoint,
    pub connector: ConnectorConfigFile,
    #[serde(default)]
    pub auth_tokens: Vec<String>,
}

impl GatewayConfigFile {
    pub fn load(path: &FsPath) -> Result<GatewayConfig, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        let doc: GatewayConfigFile =
            serde_json::from_str(&text).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        Ok(GatewayConfig {
            bind_endpoint: doc.bind_endpoint,
            connector: doc.connector.resolve().map_err(|e| GatewayError::Config(e.to_string()))?,
            auth_tokens: doc.auth_tokens,
        })
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !self.bind_endpoint.is_loopback() && self.auth_tokens.iter().all(String::is_empty) {
            return Err(GatewayError::Config(format!(
                "refusing to bind {} without client tokens",
                self.bind_endpoint
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("bad gateway configuration: {0}")]
    Config(String),
    #[error("connector target failed the startup probe: {0}")]
    Probe(ConnectorError),
    #[error("bind error: {0}")]
    Bind(String),
}

/// Body of `POST /references`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReferenceRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patient_id: Option<String>,
    #[serde(rename = "ref")]
    pub reference: ResourceRef,
    #[serde(default = "default_kind")]
    pub kind: TxKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supersedes: Option<Digest>,
}

fn default_kind() -> TxKind {
    TxKind::Add
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GatewayHealth {
    pub status: String,
    pub mode: ConnectorMode,
    pub target: Endpoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
}

pub fn error_status(e: &ConnectorError) -> StatusCode {
    match e {
        ConnectorError::NotFound(_) => StatusCode::NOT_FOUND,
        ConnectorError::Permission(_) => StatusCode::FORBIDDEN,
        ConnectorError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
        ConnectorError::ModeMismatch(_) | ConnectorError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
        ConnectorError::Integrity(_) | ConnectorError::Transport(_) | ConnectorError::Malformed { .. } => {
            StatusCode::BAD_GATEWAY
        }
        ConnectorError::Config(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

struct ApiError(ConnectorError);

impl From<ConnectorError> for ApiError {
    fn from(e: ConnectorError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.0.code().into(),
            message: self.0.to_string(),
        };
        (error_status(&self.0), Json(body)).into_response()
    }
}

struct AppState {
    connector: Connector,
    tokens: Vec<String>,
}

type Shared = State<Arc<AppState>>;

async fn require_token(State(state): Shared, req: Request, next: Next) -> Response {
    if state.tokens.is_empty() {
        return next.run(req).await;
    }
    let presented = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .unwrap_or_default();
    let known = state
        .tokens
        .iter()
        .fold(false, |acc, t| acc | bool::from(t.as_bytes().ct_eq(presented.as_bytes())));
    if known {
        return next.run(req).await;
    }
    let body = ErrorBody {
        code: "unauthorized".into(),
        message: "missing or unknown bearer token".into(),
    };
    (StatusCode::UNAUTHORIZED, Json(body)).into_response()
}

async fn health(State(state): Shared) -> Result<Json<GatewayHealth>, ApiError> {
    state.connector.health().await?;
    let config = state.connector.config();
    Ok(Json(GatewayHealth {
        status: "ok".into(),
        mode: config.mode,
        target: config.target_endpoint.clone(),
        subject: state.connector.subject().map(str::to_string),
    }))
}

async fn trajectory(State(state): Shared, Path(pid): Path<String>) -> Result<Json<Vec<TrajectoryEntry>>, ApiError> {
    Ok(Json(state.connector.get_trajectory(Some(&pid)).await?))
}

async fn current(State(state): Shared, Path(pid): Path<String>) -> Result<Json<CurrentView>, ApiError> {
    Ok(Json(state.connector.current_view(Some(&pid)).await?))
}

async fn references(State(state): Shared, Json(req): Json<ReferenceRequest>) -> Result<Json<Block>, ApiError> {
    let block = state
        .connector
        .add_reference(req.patient_id.as_deref(), &req.reference, req.kind, req.supersedes)
        .await?;
    Ok(Json(block))
}

#[derive(Deserialize)]
struct EvidenceQuery {
    patient_id: Option<String>,
}

async fn evidence(
    State(state): Shared,
    Path(height): Path<u64>,
    Query(q): Query<EvidenceQuery>,
) -> Result<Response, ApiError> {
    let entry = state.connector.entry_at(q.patient_id.as_deref(), height).await?;
    let (payload, hint) = state.connector.fetch_evidence(&entry).await?;
    let hint_header = HeaderValue::from_str(&encode_path(&hint)).expect("percent-encoded value is ASCII");
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream")),
            (header::HeaderName::from_static(MEDIA_HINT_HEADER), hint_header),
        ],
        Body::from(payload),
    )
        .into_response())
}

pub fn router(connector: Connector, tokens: Vec<String>) -> Router {
    let tokens = tokens.into_iter().filter(|t| !t.is_empty()).collect();
    let state = Arc::new(AppState { connector, tokens });
    let protected = Router::new()
        .route("/trajectory/{patient_id}", get(trajectory))
        .route("/trajectory/{patient_id}/current", get(current))
        .route("/references", post(references))
        .route("/evidence/{height}", get(evidence))
        .route_layer(middleware::from_fn_with_state(Arc::clone(&state), require_token));
    Router::new()
        .route("/health", get(health))
        .merge(protected)
        .with_state(state)
}

pub struct GatewayHandle {
    server: ServerHandle,
}

impl GatewayHandle {
    pub fn endpoint(&self) -> &Endpoint {
        self.server.endpoint()
    }

    pub async fn shutdown(self) {
        self.server.stop().await;
    }
}

/// Validates the configuration, probes the connector target and starts
/// serving.
pub async fn serve(config: GatewayConfig) -> Result<GatewayHandle, GatewayError> {
    config.validate()?;
    let connector = Connector::connect(config.connector).await.map_err(GatewayError::Probe)?;
    let (listener, endpoint) = bind(&config.bind_endpoint)
        .await
        .map_err(|e| GatewayError::Bind(format!("{}: {e}", config.bind_endpoint)))?;
    let app = router(connector, config.auth_tokens);
    Ok(GatewayHandle {
        server: ServerHandle::start(listener, endpoint, app),
    })
}

/// HTTP client of a gateway, as an application would use it.
#[derive(Clone, Debug)]
pub struct GatewayClient {
    http: reqwest::Client,
    endpoint: Endpoint,
    token: String,
}

async fn decode_json<T: serde::de::DeserializeOwned>(
    sent: Result<reqwest::Response, reqwest::Error>,
) -> Result<T, GatewayClientError> {
    let resp = check(sent).await?;
    resp.json().await.map_err(|e| GatewayClientError::Transport(e.to_string()))
}

async fn check(sent: Result<reqwest::Response, reqwest::Error>) -> Result<reqwest::Response, GatewayClientError> {
    let resp = sent.map_err(|e| GatewayClientError::Transport(e.to_string()))?;
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let body = resp.json::<ErrorBody>().await.unwrap_or_else(|_| ErrorBody {
        code: "unknown".into(),
        message: status.to_string(),
    });
    Err(GatewayClientError::Status {
        status: status.as_u16(),
        body,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayClientError {
    #[error("gateway answered {status}: {}", body.message)]
    Status { status: u16, body: ErrorBody },
    #[error("transport error: {0}")]
    Transport(String),
}

impl GatewayClient {
    pub fn new(endpoint: Endpoint, token: impl Into<String>) -> Self {
        GatewayClient {
            http: crate::net::http_client(std::time::Duration::from_secs(60)),
            endpoint,
            token: token.into(),
        }
    }

    pub async fn health(&self) -> Result<GatewayHealth, GatewayClientError> {
        decode_json(self.http.get(self.endpoint.url("/health")).send().await).await
    }

    pub async fn trajectory(&self, patient_id: &str) -> Result<Vec<TrajectoryEntry>, GatewayClientError> {
        let url = self.endpoint.url(&format!("/trajectory/{}", encode_path(patient_id)));
        decode_json(self.http.get(url).bearer_auth(&self.token).send().await).await
    }

    pub async fn current(&self, patient_id: &str) -> Result<CurrentView, GatewayClientError> {
        let url = self.endpoint.url(&format!("/trajectory/{}/current", encode_path(patient_id)));
        decode_json(self.http.get(url).bearer_auth(&self.token).send().await).await
    }

    pub async fn add_reference(&self, request: &ReferenceRequest) -> Result<Block, GatewayClientError> {
        let url = self.endpoint.url("/references");
        decode_json(self.http.post(url).bearer_auth(&self.token).json(request).send().await).await
    }

    pub async fn evidence(&self, patient_id: Option<&str>, height: u64) -> Result<(Vec<u8>, String), GatewayClientError> {
        let mut url = self.endpoint.url(&format!("/evidence/{height}"));
        if let Some(pid) = patient_id {
            url.push_str(&format!("?patient_id={}", encode_path(pid)));
        }
        let resp = check(self.http.get(url).bearer_auth(&self.token).send().await).await?;
        let hint = resp
            .headers()
            .get(MEDIA_HINT_HEADER)
            .and_then(|v| v.to_str().ok())
            .map(crate::net::decode_component)
            .unwrap_or_default();
        let bytes = resp.bytes().await.map_err(|e| GatewayClientError::Transport(e.to_string()))?;
        Ok((bytes.to_vec(), hint))
    }
}
