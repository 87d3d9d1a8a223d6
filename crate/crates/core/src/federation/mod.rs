//! Main-chain routing: one chain per patient, located by the latest
//! REGISTER/RELOCATE entry on the shared main chain.

mod client;
mod view;

pub use client::FederationClient;
pub use view::{admit, build_routing_view, routing_entry, routing_tx, RoutingEntry, RoutingView, ENDPOINT_KEY, PATIENT_ID_KEY};

use crate::node::NodeError;

#[derive(Debug, Clone, thiserror::Error)]
pub enum FederationError {
    #[error("patient {0} is already registered")]
    AlreadyRegistered(String),
    #[error("patient {0} is not registered")]
    NotFound(String),
    #[error("permission denied: {0}")]
    Permission(String),
    #[error("invalid routing transaction: {0}")]
    Invalid(String),
    #[error(transparent)]
    Node(NodeError),
}

impl From<FederationError> for NodeError {
    fn from(e: FederationError) -> Self {
        match e {
            FederationError::AlreadyRegistered(p) => NodeError::AlreadyRegistered(p),
            FederationError::NotFound(p) => NodeError::NotFound(p),
            FederationError::Permission(m) => NodeError::Permission(m),
            FederationError::Invalid(m) => NodeError::Invalid(m),
            FederationError::Node(n) => n,
        }
    }
}

impl From<NodeError> for FederationError {
    fn from(e: NodeError) -> Self {
        match e {
            NodeError::AlreadyRegistered(p) => FederationError::AlreadyRegistered(p),
            NodeError::NotFound(p) => FederationError::NotFound(p),
            NodeError::Permission(m) => FederationError::Permission(m),
            other => FederationError::Node(other),
        }
    }
}
