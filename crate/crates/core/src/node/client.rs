use std::time::Duration;

use serde::de::DeserializeOwned;

use crate::federation::RoutingEntry;
use crate::ledger::{dump_blocks, Block, CommitSignature, Transaction};
use crate::net::{http_client, Endpoint, ErrorBody};

use super::{BlockRange, Health, HeightReply, NodeError, Promotion, Proposal, SyncReport};

/// HTTP client for the node wire protocol.
#[derive(Clone, Debug)]
pub struct NodeClient {
    http: reqwest::Client,
    endpoint: Endpoint,
}

pub(crate) async fn decode<T: DeserializeOwned>(
    sent: Result<reqwest::Response, reqwest::Error>,
) -> Result<T, NodeError> {
    let resp = sent.map_err(|e| NodeError::Transport(e.to_string()))?;
    let status = resp.status();
    if status.is_success() {
        return resp.json().await.map_err(|e| NodeError::Transport(e.to_string()));
    }
    let text = resp.text().await.unwrap_or_default();
    Err(match serde_json::from_str::<ErrorBody>(&text) {
        Ok(body) => NodeError::from_wire(body),
        Err(_) => NodeError::Transport(format!("HTTP {status}: {text}")),
    })
}

impl NodeClient {
    pub fn new(endpoint: Endpoint) -> Self {
        Self::with_client(http_client(Duration::from_secs(30)), endpoint)
    }

    pub fn with_client(http: reqwest::Client, endpoint: Endpoint) -> Self {
        NodeClient { http, endpoint }
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn http(&self) -> &reqwest::Client {
        &self.http
    }

    pub async fn submit(&self, tx: &Transaction) -> Result<Block, NodeError> {
        decode(self.http.post(self.endpoint.url("/tx")).json(tx).send().await).await
    }

    pub async fn read_blocks(&self, from: u64, to: u64) -> Result<BlockRange, NodeError> {
        let url = self.endpoint.url(&format!("/blocks?from={from}&to={to}"));
        decode(self.http.get(url).send().await).await
    }

    /// Every committed block, paging until the reported high-water mark.
    pub async fn read_all(&self) -> Result<Vec<Block>, NodeError> {
        let mut blocks: Vec<Block> = Vec::new();
        loop {
            let from = blocks.len() as u64;
            let range = self.read_blocks(from, from + 1023).await?;
            let done = range.blocks.is_empty() || range.high_water < from + 1024;
            blocks.extend(range.blocks);
            if done {
                return Ok(blocks);
            }
        }
    }

    pub async fn dump(&self) -> Result<String, NodeError> {
        Ok(dump_blocks(&self.read_all().await?))
    }

    pub async fn height(&self) -> Result<u64, NodeError> {
        let reply: HeightReply = decode(self.http.get(self.endpoint.url("/height")).send().await).await?;
        Ok(reply.height)
    }

    pub async fn health(&self) -> Result<Health, NodeError> {
        decode(self.http.get(self.endpoint.url("/health")).send().await).await
    }

    pub async fn sync(&self) -> Result<SyncReport, NodeError> {
        decode(self.http.post(self.endpoint.url("/sync")).send().await).await
    }

    pub async fn promote(&self, promotion: &Promotion) -> Result<Health, NodeError> {
        decode(self.http.post(self.endpoint.url("/promote")).json(promotion).send().await).await
    }

    pub async fn propose(&self, proposal: &Proposal) -> Result<CommitSignature, NodeError> {
        decode(self.http.post(self.endpoint.url("/propose")).json(proposal).send().await).await
    }

    pub async fn commit(&self, block: &Block) -> Result<u64, NodeError> {
        let reply: HeightReply =
            decode(self.http.post(self.endpoint.url("/commit")).json(block).send().await).await?;
        Ok(reply.height)
    }

    pub async fn resolve(&self, patient_id: &str) -> Result<RoutingEntry, NodeError> {
        let url = self.endpoint.url(&format!("/route/{}", crate::net::encode_path(patient_id)));
        decode(self.http.get(url).send().await).await
    }

    pub async fn route(&self, tx: &Transaction) -> Result<Block, NodeError> {
        decode(self.http.post(self.endpoint.url("/route")).json(tx).send().await).await
    }
}
