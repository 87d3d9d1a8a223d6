use std::time::Duration;

use axum::http::header;

use crate::ledger::Digest;
use crate::net::{decode_component, encode_path, http_client, Endpoint, ErrorBody};

use super::{ResourceError, ResourceRef, ACCESS_KEY_HEADER, MEDIA_HINT_HEADER};

async fn check(sent: Result<reqwest::Response, reqwest::Error>) -> Result<reqwest::Response, ResourceError> {
    let resp = sent.map_err(|e| ResourceError::Transport(e.to_string()))?;
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let body = resp.json::<ErrorBody>().await.ok();
    Err(ResourceError::from_wire(status, body))
}

async fn payload(resp: reqwest::Response) -> Result<(Vec<u8>, String), ResourceError> {
    let hint = resp
        .headers()
        .get(MEDIA_HINT_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(decode_component)
        .unwrap_or_default();
    let bytes = resp.bytes().await.map_err(|e| ResourceError::Transport(e.to_string()))?;
    Ok((bytes.to_vec(), hint))
}

/// Fetches the payload `r` points at, from whichever store its URL names,
/// and checks it against `r.content_hash`.
pub async fn fetch_ref(http: &reqwest::Client, r: &ResourceRef) -> Result<(Vec<u8>, String), ResourceError> {
    let resp = check(http.get(&r.url).header(ACCESS_KEY_HEADER, &r.access_key).send().await).await?;
    let (bytes, hint) = payload(resp).await?;
    let actual = Digest::of(&bytes);
    if actual != r.content_hash {
        return Err(ResourceError::Integrity {
            url: r.url.clone(),
            expected: r.content_hash,
            actual,
        });
    }
    Ok((bytes, hint))
}

/// Client of one institution's store, holding that institution's token.
#[derive(Clone, Debug)]
pub struct ResourcesClient {
    http: reqwest::Client,
    endpoint: Endpoint,
    token: String,
}

impl ResourcesClient {
    pub fn new(endpoint: Endpoint, token: impl Into<String>) -> Self {
        Self::with_client(http_client(Duration::from_secs(60)), endpoint, token)
    }

    pub fn with_client(http: reqwest::Client, endpoint: Endpoint, token: impl Into<String>) -> Self {
        ResourcesClient {
            http,
            endpoint,
            token: token.into(),
        }
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn http(&self) -> &reqwest::Client {
        &self.http
    }

    pub async fn store(&self, payload: Vec<u8>, media_hint: &str) -> Result<ResourceRef, ResourceError> {
        let resp = check(
            self.http
                .post(self.endpoint.url("/resources"))
                .bearer_auth(&self.token)
                .header(MEDIA_HINT_HEADER, encode_path(media_hint))
                .header(header::CONTENT_TYPE, "application/octet-stream")
                .body(payload)
                .send()
                .await,
        )
        .await?;
        resp.json().await.map_err(|e| ResourceError::Transport(e.to_string()))
    }

    /// Raw read by id; no integrity check.
    pub async fn retrieve(&self, resource_id: &str, access_key: &str) -> Result<(Vec<u8>, String), ResourceError> {
        let url = self.endpoint.url(&format!("/resources/{}", encode_path(resource_id)));
        let resp = check(self.http.get(url).header(ACCESS_KEY_HEADER, access_key).send().await).await?;
        payload(resp).await
    }

    pub async fn delete(&self, resource_id: &str, access_key: &str) -> Result<(), ResourceError> {
        let url = self.endpoint.url(&format!("/resources/{}", encode_path(resource_id)));
        check(
            self.http
                .delete(url)
                .bearer_auth(&self.token)
                .header(ACCESS_KEY_HEADER, access_key)
                .send()
                .await,
        )
        .await
        .map(drop)
    }

    pub async fn health(&self) -> Result<(), ResourceError> {
        check(self.http.get(self.endpoint.url("/health")).send().await).await.map(drop)
    }
}
