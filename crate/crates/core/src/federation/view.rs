use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ledger::{Block, Credential, Description, Identity, LedgerError, Role, Timestamp, Transaction, TxKind};
use crate::net::Endpoint;

use super::FederationError;

pub const PATIENT_ID_KEY: &str = "patient_id";
pub const ENDPOINT_KEY: &str = "endpoint";

/// Where one patient's chain lives, as of the main-chain height that said so.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingEntry {
    pub patient_id: String,
    pub chain_endpoint: Endpoint,
    pub recorded_at: u64,
}

/// Latest routing entry per patient, derived from main-chain blocks.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingView {
    entries: BTreeMap<String, RoutingEntry>,
    as_of_height: u64,
}

/// Decodes the routing payload of a main-chain block, if it carries one.
pub fn routing_entry(block: &Block) -> Option<(TxKind, RoutingEntry)> {
    if block.height == 0 || !block.tx.kind.is_routing() {
        return None;
    }
    let patient_id = block.tx.description.get(PATIENT_ID_KEY).filter(|p| !p.is_empty())?;
    let endpoint = Endpoint::parse(block.tx.description.get(ENDPOINT_KEY)?).ok()?;
    Some((
        block.tx.kind,
        RoutingEntry {
            patient_id: patient_id.to_string(),
            chain_endpoint: endpoint,
            recorded_at: block.height,
        },
    ))
}

impl RoutingView {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies one committed block. Blocks must arrive in height order.
    pub fn apply(&mut self, block: &Block) {
        self.as_of_height = self.as_of_height.max(block.height);
        if let Some((_, entry)) = routing_entry(block) {
            self.entries.insert(entry.patient_id.clone(), entry);
        }
    }

    pub fn resolve(&self, patient_id: &str) -> Option<&RoutingEntry> {
        self.entries.get(patient_id)
    }

    pub fn contains(&self, patient_id: &str) -> bool {
        self.entries.contains_key(patient_id)
    }

    pub fn as_of_height(&self) -> u64 {
        self.as_of_height
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &RoutingEntry> {
        self.entries.values()
    }
}

pub fn build_routing_view(blocks: &[Block]) -> RoutingView {
    let mut view = RoutingView::new();
    for block in blocks {
        view.apply(block);
    }
    view
}

/// Main-chain admission rules, checked before a routing transaction is
/// endorsed: institution signer, well-formed payload, REGISTER only for new
/// patients and RELOCATE only for known ones.
pub fn admit(view: &RoutingView, tx: &Transaction, creator: &Identity) -> Result<(), FederationError> {
    if creator.role != Role::Institution {
        return Err(FederationError::Permission(format!(
            "{} has role {:?}; routing changes need an institution",
            creator.actor_id, creator.role
        )));
    }
    let patient_id = tx
        .description
        .get(PATIENT_ID_KEY)
        .filter(|p| !p.is_empty())
        .ok_or_else(|| FederationError::Invalid("routing transaction lacks patient_id".into()))?;
    let endpoint = tx
        .description
        .get(ENDPOINT_KEY)
        .ok_or_else(|| FederationError::Invalid("routing transaction lacks endpoint".into()))?;
    Endpoint::parse(endpoint).map_err(|e| FederationError::Invalid(e.to_string()))?;
    match tx.kind {
        TxKind::Register if view.contains(patient_id) => {
            Err(FederationError::AlreadyRegistered(patient_id.to_string()))
        }
        TxKind::Relocate if !view.contains(patient_id) => Err(FederationError::NotFound(patient_id.to_string())),
        TxKind::Register | TxKind::Relocate => Ok(()),
        other => Err(FederationError::Invalid(format!("{other} is not a routing transaction"))),
    }
}

/// Signed REGISTER or RELOCATE transaction.
pub fn routing_tx(
    kind: TxKind,
    patient_id: &str,
    endpoint: &Endpoint,
    institution: &Credential,
) -> Result<Transaction, LedgerError> {
    let desc = Description::new()
        .with(PATIENT_ID_KEY, patient_id)
        .with(ENDPOINT_KEY, endpoint.as_str());
    Transaction::signed(kind, desc, institution, Timestamp::now())
}
