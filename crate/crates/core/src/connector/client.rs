use std::time::Duration;

use crate::federation::FederationClient;
use crate::ledger::{Block, ChainKind, Description, Digest, Timestamp, Transaction, TxKind};
use crate::net::{http_client, Endpoint};
use crate::node::{Health, NodeClient};
use crate::resources::{fetch_ref, ResourceRef};

use super::{keys, materialize_current_view, ConnectorConfig, ConnectorError, ConnectorMode, CurrentView, TrajectoryEntry};

/// Description recorded for one change.
pub fn reference_description(reference: &ResourceRef, kind: TxKind, supersedes: Option<Digest>) -> Description {
    let mut d = Description::new()
        .with(keys::REF_URL, reference.url.as_str())
        .with(keys::ACCESS_KEY, reference.access_key.as_str())
        .with(keys::CONTENT_HASH, reference.content_hash.to_hex())
        .with(keys::MEDIA_HINT, reference.media_hint.as_str())
        .with(keys::KIND, kind.as_str());
    if let Some(target) = supersedes {
        d.insert(keys::SUPERSEDES, target.to_hex());
    }
    d
}

/// Decodes a patient-chain block above genesis.
pub fn decode_entry(block: &Block) -> Result<TrajectoryEntry, ConnectorError> {
    let malformed = |reason: String| ConnectorError::Malformed {
        height: block.height,
        reason,
    };
    let tx = &block.tx;
    if !tx.kind.is_change() {
        return Err(malformed(format!("{} is not a change", tx.kind)));
    }
    let field = |key: &str| {
        tx.description
            .get(key)
            .ok_or_else(|| malformed(format!("missing {key}")))
    };
    if field(keys::KIND)? != tx.kind.as_str() {
        return Err(malformed("description kind differs from transaction kind".into()));
    }
    let content_hash = Digest::from_hex(field(keys::CONTENT_HASH)?).map_err(|e| malformed(e.to_string()))?;
    let supersedes = tx
        .description
        .get(keys::SUPERSEDES)
        .map(Digest::from_hex)
        .transpose()
        .map_err(|e| malformed(e.to_string()))?;
    Ok(TrajectoryEntry {
        height: block.height,
        tx_id: tx.tx_id,
        kind: tx.kind,
        reference: ResourceRef {
            url: field(keys::REF_URL)?.to_string(),
            access_key: field(keys::ACCESS_KEY)?.to_string(),
            content_hash,
            media_hint: field(keys::MEDIA_HINT)?.to_string(),
        },
        supersedes,
        creator: tx.creator.clone(),
        created_at: tx.created_at,
    })
}

/// A configured connector. Reads run concurrently; writes through one
/// instance are serialized.
pub struct Connector {
    config: ConnectorConfig,
    http: reqwest::Client,
    target: NodeClient,
    /// Patient of the target chain (direct mode).
    subject: Option<String>,
    writes: tokio::sync::Mutex<()>,
}

impl Connector {
    /// Probes the target node and checks it serves the chain kind the mode
    /// needs.
    pub async fn connect(config: ConnectorConfig) -> Result<Self, ConnectorError> {
        let http = http_client(Duration::from_secs(60));
        let target = NodeClient::with_client(http.clone(), config.target_endpoint.clone());
        let health = target.health().await?;
        let expected = match config.mode {
            ConnectorMode::ViaMain => ChainKind::Main,
            ConnectorMode::Direct => ChainKind::Patient,
        };
        if health.chain_kind != expected {
            return Err(ConnectorError::ModeMismatch(format!(
                "{:?} mode needs a {expected} chain node, {} serves a {} chain",
                config.mode, config.target_endpoint, health.chain_kind
            )));
        }
        let subject = (config.mode == ConnectorMode::Direct).then_some(health.subject);
        Ok(Connector {
            config,
            http,
            target,
            subject,
            writes: tokio::sync::Mutex::new(()),
        })
    }

    pub fn config(&self) -> &ConnectorConfig {
        &self.config
    }

    pub fn mode(&self) -> ConnectorMode {
        self.config.mode
    }

    /// Patient served in direct mode.
    pub fn subject(&self) -> Option<&str> {
        self.subject.as_deref()
    }

    pub fn http(&self) -> &reqwest::Client {
        &self.http
    }

    pub async fn health(&self) -> Result<Health, ConnectorError> {
        Ok(self.target.health().await?)
    }

    /// Endpoint of the patient chain a request for `patient_id` goes to.
    pub async fn locate(&self, patient_id: Option<&str>) -> Result<Endpoint, ConnectorError> {
        match (self.config.mode, patient_id) {
            (ConnectorMode::ViaMain, Some(pid)) => {
                let federation = FederationClient::with_node(self.target.clone());
                Ok(federation.resolve_patient(pid).await?)
            }
            (ConnectorMode::ViaMain, None) => Err(ConnectorError::ModeMismatch(
                "a patient id is required when routing through the main chain".into(),
            )),
            (ConnectorMode::Direct, Some(pid)) if Some(pid) != self.subject() => {
                Err(ConnectorError::ModeMismatch(format!(
                    "this connector serves {}, not {pid}",
                    self.subject().unwrap_or("?")
                )))
            }
            (ConnectorMode::Direct, _) => Ok(self.config.target_endpoint.clone()),
        }
    }

    async fn patient_node(&self, patient_id: Option<&str>) -> Result<NodeClient, ConnectorError> {
        let endpoint = self.locate(patient_id).await?;
        Ok(NodeClient::with_client(self.http.clone(), endpoint))
    }

    /// Commits one change referencing `reference`. ADD takes no
    /// `supersedes`; MODIFY and DELETE require one.
    pub async fn add_reference(
        &self,
        patient_id: Option<&str>,
        reference: &ResourceRef,
        kind: TxKind,
        supersedes: Option<Digest>,
    ) -> Result<Block, ConnectorError> {
        match (kind, supersedes) {
            (TxKind::Add, None) | (TxKind::Modify | TxKind::Delete, Some(_)) => {}
            (TxKind::Add, Some(_)) => return Err(ConnectorError::Invalid("ADD cannot supersede".into())),
            (TxKind::Modify | TxKind::Delete, None) => {
                return Err(ConnectorError::Invalid(format!("{kind} needs a superseded tx_id")))
            }
            (other, _) => return Err(ConnectorError::Invalid(format!("{other} is not a trajectory change"))),
        }
        let node = self.patient_node(patient_id).await?;
        let tx = Transaction::signed(
            kind,
            reference_description(reference, kind, supersedes),
            &self.config.credential,
            Timestamp::now(),
        )
        .map_err(|e| ConnectorError::Invalid(e.to_string()))?;
        let _guard = self.writes.lock().await;
        Ok(node.submit(&tx).await?)
    }

    /// Every change on the patient's chain, in height order.
    pub async fn get_trajectory(&self, patient_id: Option<&str>) -> Result<Vec<TrajectoryEntry>, ConnectorError> {
        let node = self.patient_node(patient_id).await?;
        let blocks = node.read_all().await?;
        blocks.iter().skip(1).map(decode_entry).collect()
    }

    pub async fn current_view(&self, patient_id: Option<&str>) -> Result<CurrentView, ConnectorError> {
        Ok(materialize_current_view(&self.get_trajectory(patient_id).await?))
    }

    pub async fn entry_at(&self, patient_id: Option<&str>, height: u64) -> Result<TrajectoryEntry, ConnectorError> {
        let node = self.patient_node(patient_id).await?;
        let range = node.read_blocks(height, height).await?;
        match range.blocks.first() {
            Some(block) if height > 0 => decode_entry(block),
            _ => Err(ConnectorError::NotFound(format!("no trajectory entry at height {height}"))),
        }
    }

    /// The payload `entry` references, verified against its content hash.
    pub async fn fetch_evidence(&self, entry: &TrajectoryEntry) -> Result<(Vec<u8>, String), ConnectorError> {
        Ok(fetch_ref(&self.http, &entry.reference).await?)
    }
}
