//! Client SDK for reading and extending patient trajectories.
//!
//! A connector runs in one of two modes. `ViaMain` targets a main-chain node
//! and resolves every patient through it; `Direct` targets one patient-chain
//! node and only serves that chain's patient. Evidence references live in
//! the transaction description under the keys in [`keys`].

mod client;
mod view;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use client::{decode_entry, reference_description, Connector};
pub use view::{materialize_current_view, CurrentView, DanglingReference};

use crate::federation::FederationError;
use crate::ledger::{ActorId, Credential, CredentialFile, Digest, Timestamp, TxKind};
use crate::net::Endpoint;
use crate::node::NodeError;
use crate::resources::{ResourceError, ResourceRef};

/// Description keys of a change transaction.
pub mod keys {
    pub const REF_URL: &str = "ref_url";
    pub const ACCESS_KEY: &str = "access_key";
    pub const CONTENT_HASH: &str = "content_hash";
    pub const MEDIA_HINT: &str = "media_hint";
    pub const KIND: &str = "kind";
    pub const SUPERSEDES: &str = "supersedes";
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectorMode {
    ViaMain,
    Direct,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConnectorConfig {
    pub mode: ConnectorMode,
    /// Main-chain node for `ViaMain`, patient-chain node for `Direct`.
    pub target_endpoint: Endpoint,
    pub credential: Credential,
}

/// Configuration document form: the key lives in a separate credential file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConnectorConfigFile {
    pub mode: ConnectorMode,
    pub target_endpoint: Endpoint,
    pub credential_file: PathBuf,
}

impl ConnectorConfigFile {
    pub fn resolve(&self) -> Result<ConnectorConfig, ConnectorError> {
        let text = std::fs::read_to_string(&self.credential_file)
            .map_err(|e| ConnectorError::Config(format!("{}: {e}", self.credential_file.display())))?;
        let file: CredentialFile = serde_json::from_str(&text)
            .map_err(|e| ConnectorError::Config(format!("{}: {e}", self.credential_file.display())))?;
        let credential = Credential::try_from(file).map_err(|e| ConnectorError::Config(e.to_string()))?;
        Ok(ConnectorConfig {
            mode: self.mode,
            target_endpoint: self.target_endpoint.clone(),
            credential,
        })
    }

    pub fn load(path: &Path) -> Result<ConnectorConfig, ConnectorError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConnectorError::Config(format!("{}: {e}", path.display())))?;
        let doc: ConnectorConfigFile =
            serde_json::from_str(&text).map_err(|e| ConnectorError::Config(format!("{}: {e}", path.display())))?;
        doc.resolve()
    }
}

/// One decoded change of a patient chain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub height: u64,
    pub tx_id: Digest,
    pub kind: TxKind,
    #[serde(rename = "ref")]
    pub reference: ResourceRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supersedes: Option<Digest>,
    pub creator: ActorId,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConnectorError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("permission denied: {0}")]
    Permission(String),
    #[error("unavailable: {0}")]
    Unavailable(String),
    #[error("mode mismatch: {0}")]
    ModeMismatch(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("block {height} is not a trajectory entry: {reason}")]
    Malformed { height: u64, reason: String },
    #[error("bad connector configuration: {0}")]
    Config(String),
}

impl ConnectorError {
    pub fn code(&self) -> &'static str {
        match self {
            ConnectorError::NotFound(_) => "not_found",
            ConnectorError::Permission(_) => "permission",
            ConnectorError::Unavailable(_) => "unavailable",
            ConnectorError::ModeMismatch(_) => "mode_mismatch",
            ConnectorError::Invalid(_) => "invalid",
            ConnectorError::Integrity(_) => "integrity",
            ConnectorError::Transport(_) => "transport",
            ConnectorError::Malformed { .. } => "malformed",
            ConnectorError::Config(_) => "config",
        }
    }
}

impl From<NodeError> for ConnectorError {
    fn from(e: NodeError) -> Self {
        let message = e.to_string();
        match e {
            NodeError::NotFound(m) => ConnectorError::NotFound(m),
            NodeError::Permission(m) => ConnectorError::Permission(m),
            NodeError::Unavailable(m) => ConnectorError::Unavailable(m),
            NodeError::Transport(m) => ConnectorError::Transport(m),
            NodeError::Invalid(m) => ConnectorError::Invalid(m),
            NodeError::Duplicate(_)
            | NodeError::AlreadyRegistered(_)
            | NodeError::Conflict(_) => ConnectorError::Invalid(message),
            NodeError::Storage(_) | NodeError::CorruptStore(_) | NodeError::Bind(_) | NodeError::Config(_) => {
                ConnectorError::Unavailable(message)
            }
        }
    }
}

impl From<FederationError> for ConnectorError {
    fn from(e: FederationError) -> Self {
        NodeError::from(e).into()
    }
}

impl From<ResourceError> for ConnectorError {
    fn from(e: ResourceError) -> Self {
        let message = e.to_string();
        match e {
            ResourceError::Integrity { .. } => ConnectorError::Integrity(message),
            ResourceError::NotFound(_) => ConnectorError::NotFound(message),
            ResourceError::WrongKey(_) | ResourceError::Unauthorized(_) => ConnectorError::Permission(message),
            ResourceError::Invalid(m) => ConnectorError::Invalid(m),
            ResourceError::Transport(m) => ConnectorError::Transport(m),
            ResourceError::Io(_) => ConnectorError::Transport(message),
        }
    }
}
