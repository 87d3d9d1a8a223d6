use crate::ledger::{Block, Credential, TxKind};
use crate::net::Endpoint;
use crate::node::NodeClient;

use super::{routing_tx, FederationError, RoutingEntry};

/// Talks to one main-chain node.
#[derive(Clone, Debug)]
pub struct FederationClient {
    node: NodeClient,
}

impl FederationClient {
    pub fn new(main_node: Endpoint) -> Self {
        FederationClient {
            node: NodeClient::new(main_node),
        }
    }

    pub fn with_node(node: NodeClient) -> Self {
        FederationClient { node }
    }

    pub fn endpoint(&self) -> &Endpoint {
        self.node.endpoint()
    }

    pub async fn register_patient(
        &self,
        patient_id: &str,
        chain_endpoint: &Endpoint,
        institution: &Credential,
    ) -> Result<Block, FederationError> {
        self.submit(TxKind::Register, patient_id, chain_endpoint, institution).await
    }

    pub async fn relocate_patient(
        &self,
        patient_id: &str,
        new_endpoint: &Endpoint,
        institution: &Credential,
    ) -> Result<Block, FederationError> {
        self.submit(TxKind::Relocate, patient_id, new_endpoint, institution).await
    }

    /// Read-only lookup answered by the node from its local view.
    pub async fn resolve_patient(&self, patient_id: &str) -> Result<Endpoint, FederationError> {
        Ok(self.resolve_entry(patient_id).await?.chain_endpoint)
    }

    pub async fn resolve_entry(&self, patient_id: &str) -> Result<RoutingEntry, FederationError> {
        Ok(self.node.resolve(patient_id).await?)
    }

    async fn submit(
        &self,
        kind: TxKind,
        patient_id: &str,
        endpoint: &Endpoint,
        institution: &Credential,
    ) -> Result<Block, FederationError> {
        let tx = routing_tx(kind, patient_id, endpoint, institution)
            .map_err(|e| FederationError::Invalid(e.to_string()))?;
        Ok(self.node.route(&tx).await?)
    }
}
