//! A permissioned chain node.
//!
//! The leader orders transactions into blocks and collects endorsements from
//! the other validators; a block commits once it carries ⌊2N/3⌋+1 of them.
//! Reads are answered from the local replica without contacting peers.
//!
//! Wire protocol (JSON bodies, blocks in the chain-dump record format):
//!
//! | method | path                | body / query             | reply                 |
//! |--------|---------------------|--------------------------|-----------------------|
//! | POST   | `/tx`               | transaction              | committed block       |
//! | GET    | `/blocks`           | `?from=&to=`             | [`BlockRange`]        |
//! | GET    | `/height`           |                          | `{"height": n}`       |
//! | POST   | `/propose`          | [`Proposal`]             | commit signature      |
//! | POST   | `/commit`           | committed block          | `{"height": n}`       |
//! | POST   | `/sync`             |                          | [`SyncReport`]        |
//! | GET    | `/health`           |                          | [`Health`]            |
//! | GET    | `/route/{patient}`  | main chains only         | routing entry         |
//! | POST   | `/route`            | main chains only         | committed block       |
//! | POST   | `/promote`          | [`Promotion`]            | [`Health`]            |

mod client;
mod runtime;
mod server;
mod store;

use std::path::PathBuf;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

pub use client::NodeClient;
pub use runtime::Node;
pub use server::{spawn_node, NodeHandle};
pub use store::BlockLog;

use crate::ledger::{ActorId, Block, ChainKind, Credential, Identity, Signature, Timestamp};
use crate::net::{Endpoint, ErrorBody};

fn default_peer_timeout_ms() -> u64 {
    3_000
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NodeConfig {
    pub node_id: ActorId,
    pub chain_id: String,
    pub chain_kind: ChainKind,
    /// Port 0 binds an ephemeral port.
    pub listen_endpoint: Endpoint,
    pub peer_endpoints: Vec<Endpoint>,
    pub validator_identities: Vec<Identity>,
    /// Non-validator identities allowed to submit transactions.
    #[serde(default)]
    pub writer_identities: Vec<Identity>,
    pub data_dir: PathBuf,
    pub is_leader: bool,
    /// Signing key of `node_id`.
    pub node_key: Credential,
    pub genesis: Block,
    /// Background catch-up period for followers; 0 disables it.
    #[serde(default)]
    pub sync_interval_ms: u64,
    #[serde(default = "default_peer_timeout_ms")]
    pub peer_timeout_ms: u64,
}

impl NodeConfig {
    pub fn validate(&self) -> Result<(), NodeError> {
        if self.validator_identities.is_empty() {
            return Err(NodeError::Config("validator set is empty".into()));
        }
        let me = self
            .validator_identities
            .iter()
            .find(|v| v.actor_id == self.node_id)
            .ok_or_else(|| NodeError::Config(format!("{} is not in the validator set", self.node_id)))?;
        if me != self.node_key.identity() {
            return Err(NodeError::Config(format!("node key does not match validator {}", self.node_id)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Proposal {
    pub block: Block,
    pub leader_endpoint: Endpoint,
}

/// Operator request that turns a follower into the leader, signed with the
/// follower's own key. Used when a seat moves to a new host.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Promotion {
    pub node_id: ActorId,
    pub issued_at: Timestamp,
    pub signature: Signature,
}

/// `"PHT-PROMOTE" 0x01 ‖ u32 len ‖ chain_id ‖ u32 len ‖ node_id ‖ i64 issued_at`
pub fn promotion_message(chain_id: &str, node_id: &ActorId, issued_at: Timestamp) -> Vec<u8> {
    let mut m = b"PHT-PROMOTE\x01".to_vec();
    for part in [chain_id.as_bytes(), node_id.as_str().as_bytes()] {
        m.extend_from_slice(&(part.len() as u32).to_be_bytes());
        m.extend_from_slice(part);
    }
    m.extend_from_slice(&issued_at.millis().to_be_bytes());
    m
}

impl Promotion {
    pub fn new(chain_id: &str, seat_key: &Credential) -> Self {
        let issued_at = Timestamp::now();
        let node_id = seat_key.actor_id().clone();
        let signature = seat_key.sign(&promotion_message(chain_id, &node_id, issued_at));
        Promotion {
            node_id,
            issued_at,
            signature,
        }
    }
}

/// Blocks in a requested range plus the node's committed height.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRange {
    pub blocks: Vec<Block>,
    pub high_water: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub node_id: ActorId,
    pub chain_id: String,
    pub chain_kind: ChainKind,
    pub subject: String,
    pub height: u64,
    pub is_leader: bool,
    pub endpoint: Endpoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncStatus {
    Ok,
    NoPeersReachable,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncReport {
    pub status: SyncStatus,
    pub height: u64,
    pub advanced_by: u64,
    pub reachable_peers: usize,
    /// Peers that served a block failing validation.
    pub flagged_peers: Vec<Endpoint>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub(crate) struct HeightReply {
    pub height: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NodeError {
    #[error("permission denied: {0}")]
    Permission(String),
    #[error("write unavailable: {0}")]
    Unavailable(String),
    #[error("duplicate transaction {0}")]
    Duplicate(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("already registered: {0}")]
    AlreadyRegistered(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("storage error: {0}")]
    Storage(String),
    #[error("persisted chain rejected: {0}")]
    CorruptStore(String),
    #[error("bind error: {0}")]
    Bind(String),
    #[error("bad configuration: {0}")]
    Config(String),
}

impl NodeError {
    pub fn code(&self) -> &'static str {
        match self {
            NodeError::Permission(_) => "permission",
            NodeError::Unavailable(_) => "unavailable",
            NodeError::Duplicate(_) => "duplicate",
            NodeError::Invalid(_) => "invalid",
            NodeError::NotFound(_) => "not_found",
            NodeError::AlreadyRegistered(_) => "already_registered",
            NodeError::Conflict(_) => "conflict",
            NodeError::Transport(_) => "transport",
            NodeError::Storage(_) => "storage",
            NodeError::CorruptStore(_) => "corrupt_store",
            NodeError::Bind(_) => "bind",
            NodeError::Config(_) => "config",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            NodeError::Permission(_) => StatusCode::FORBIDDEN,
            NodeError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            NodeError::Duplicate(_) | NodeError::AlreadyRegistered(_) | NodeError::Conflict(_) => StatusCode::CONFLICT,
            NodeError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            NodeError::NotFound(_) => StatusCode::NOT_FOUND,
            NodeError::Transport(_) => StatusCode::BAD_GATEWAY,
            NodeError::Storage(_) | NodeError::CorruptStore(_) | NodeError::Bind(_) | NodeError::Config(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }

    fn message(&self) -> String {
        match self {
            NodeError::Permission(m)
            | NodeError::Unavailable(m)
            | NodeError::Duplicate(m)
            | NodeError::Invalid(m)
            | NodeError::NotFound(m)
            | NodeError::AlreadyRegistered(m)
            | NodeError::Conflict(m)
            | NodeError::Transport(m)
            | NodeError::Storage(m)
            | NodeError::CorruptStore(m)
            | NodeError::Bind(m)
            | NodeError::Config(m) => m.clone(),
        }
    }

    /// Rebuilds an error received as an [`ErrorBody`].
    pub fn from_wire(body: ErrorBody) -> Self {
        let m = body.message;
        match body.code.as_str() {
            "permission" => NodeError::Permission(m),
            "unavailable" => NodeError::Unavailable(m),
            "duplicate" => NodeError::Duplicate(m),
            "invalid" => NodeError::Invalid(m),
            "not_found" => NodeError::NotFound(m),
            "already_registered" => NodeError::AlreadyRegistered(m),
            "conflict" => NodeError::Conflict(m),
            "storage" => NodeError::Storage(m),
            "corrupt_store" => NodeError::CorruptStore(m),
            "bind" => NodeError::Bind(m),
            "config" => NodeError::Config(m),
            _ => NodeError::Transport(m),
        }
    }
}

impl IntoResponse for NodeError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code().to_string(),
            message: self.message(),
        };
        (self.status(), Json(body)).into_response()
    }
}
