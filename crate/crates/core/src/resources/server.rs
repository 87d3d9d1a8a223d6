use std::path::PathBuf;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, HeaderMap, HeaderValue};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use subtle::ConstantTimeEq;

use crate::net::{bind, decode_component, encode_path, Endpoint, ServerHandle};

use super::{ResourceError, ResourceRef, ResourceStore, ACCESS_KEY_HEADER, MAX_PAYLOAD_BYTES, MEDIA_HINT_HEADER};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StoreConfig {
    pub listen_endpoint: Endpoint,
    pub data_dir: PathBuf,
    /// Bearer tokens of the institution's applications; required to store
    /// or delete. Reads need only the resource key.
    pub auth_tokens: Vec<String>,
}

struct AppState {
    store: ResourceStore,
    base_url: String,
    tokens: Vec<String>,
}

fn header_str<'a>(headers: &'a HeaderMap, name: &str) -> Option<&'a str> {
    headers.get(name).and_then(|v| v.to_str().ok())
}

fn caller_authorized(state: &AppState, headers: &HeaderMap) -> Result<(), ResourceError> {
    let presented = header_str(headers, header::AUTHORIZATION.as_str())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or_else(|| ResourceError::Unauthorized("missing bearer token".into()))?;
    let known = state
        .tokens
        .iter()
        .fold(false, |acc, t| acc | bool::from(t.as_bytes().ct_eq(presented.as_bytes())));
    if known {
        Ok(())
    } else {
        Err(ResourceError::Unauthorized("unknown bearer token".into()))
    }
}

fn access_key(headers: &HeaderMap) -> String {
    header_str(headers, ACCESS_KEY_HEADER).unwrap_or_default().to_string()
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ResourceError> + Send + 'static,
) -> Result<T, ResourceError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ResourceError::Io(e.to_string()))?
}

async fn create(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<ResourceRef>, ResourceError> {
    caller_authorized(&state, &headers)?;
    let media_hint = header_str(&headers, MEDIA_HINT_HEADER).map(decode_component).unwrap_or_default();
    let hint = media_hint.clone();
    let st = Arc::clone(&state);
    let minted = blocking(move || st.store.store(&body, &hint)).await?;
    Ok(Json(ResourceRef {
        url: format!("{}/resources/{}", state.base_url, minted.resource_id),
        access_key: minted.access_key,
        content_hash: minted.content_hash,
        media_hint,
    }))
}

fn content_type(hint: &str) -> HeaderValue {
    let plausible = hint.contains('/') && hint.bytes().all(|b| b.is_ascii_graphic() || b == b' ');
    plausible
        .then(|| HeaderValue::from_str(hint).ok())
        .flatten()
        .unwrap_or(HeaderValue::from_static("application/octet-stream"))
}

async fn read(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ResourceError> {
    let key = access_key(&headers);
    let (payload, hint) = blocking(move || state.store.retrieve(&id, &key)).await?;
    let hint_header = HeaderValue::from_str(&encode_path(&hint)).expect("percent-encoded value is ASCII");
    Ok((
        [(header::CONTENT_TYPE, content_type(&hint)), (header::HeaderName::from_static(MEDIA_HINT_HEADER), hint_header)],
        Body::from(payload),
    )
        .into_response())
}

async fn remove(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Json<serde_json::Value>, ResourceError> {
    caller_authorized(&state, &headers)?;
    let key = access_key(&headers);
    let gone = id.clone();
    blocking(move || state.store.delete(&id, &key)).await?;
    Ok(Json(serde_json::json!({ "deleted": gone })))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "resources": state.store.len() }))
}

pub struct StoreHandle {
    server: ServerHandle,
    state: Arc<AppState>,
}

impl StoreHandle {
    pub fn endpoint(&self) -> &Endpoint {
        self.server.endpoint()
    }

    pub fn store(&self) -> &ResourceStore {
        &self.state.store
    }

    pub async fn shutdown(self) {
        self.server.stop().await;
    }
}

pub async fn spawn_store(config: StoreConfig) -> Result<StoreHandle, ResourceError> {
    let store = ResourceStore::open(&config.data_dir)?;
    let (listener, endpoint) = bind(&config.listen_endpoint)
        .await
        .map_err(|e| ResourceError::Io(format!("bind {}: {e}", config.listen_endpoint)))?;
    let state = Arc::new(AppState {
        store,
        base_url: endpoint.url(""),
        tokens: config.auth_tokens,
    });
    let app = Router::new()
        .route("/resources", post(create))
        .route("/resources/{id}", get(read).delete(remove))
        .route("/health", get(health))
        .layer(DefaultBodyLimit::max(MAX_PAYLOAD_BYTES))
        .with_state(Arc::clone(&state));
    Ok(StoreHandle {
        server: ServerHandle::start(listener, endpoint, app),
        state,
    })
}
