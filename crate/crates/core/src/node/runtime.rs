use std::collections::{BTreeSet, HashSet};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use futures::future::join_all;
use tracing::{debug, info, warn};

use crate::federation::{self, RoutingEntry, RoutingView};
use crate::ledger::{
    commit_message, validate_chain, Authority, Block, Chain, ChainKind, CommitSignature, Digest, Timestamp,
    Transaction, ValidationReport, Violation,
};
use crate::net::{http_client, Endpoint};

use super::client::NodeClient;
use super::store::BlockLog;
use super::{promotion_message, BlockRange, Health, NodeConfig, NodeError, Promotion, Proposal, SyncReport, SyncStatus};

const SYNC_BATCH: u64 = 256;
const PROMOTION_WINDOW_MS: i64 = 5 * 60 * 1000;

/// Local replica: the chain plus indexes derived from it.
struct Replica {
    chain: Chain,
    tx_ids: HashSet<Digest>,
    routing: Option<RoutingView>,
}

impl Replica {
    fn new(chain: Chain) -> Self {
        let tx_ids = chain.blocks.iter().map(|b| b.tx.tx_id).collect();
        let routing = (chain.kind == ChainKind::Main).then(|| federation::build_routing_view(&chain.blocks));
        Replica { chain, tx_ids, routing }
    }

    fn push(&mut self, block: Block) {
        self.tx_ids.insert(block.tx.tx_id);
        if let Some(view) = self.routing.as_mut() {
            view.apply(&block);
        }
        self.chain.blocks.push(block);
    }
}

fn violation_error(v: Violation) -> NodeError {
    match v {
        Violation::UnauthorizedCreator(_) | Violation::BadTxSignature | Violation::UnknownValidator(_) => {
            NodeError::Permission(v.to_string())
        }
        Violation::DuplicateTx(id) => NodeError::Duplicate(id.to_hex()),
        other => NodeError::Invalid(other.to_string()),
    }
}

/// One running chain node. Shared behind an `Arc` by the HTTP handlers.
pub struct Node {
    config: NodeConfig,
    endpoint: Endpoint,
    leading: AtomicBool,
    authority: Authority,
    replica: RwLock<Replica>,
    /// Serializes every mutation of the replica.
    write_lock: tokio::sync::Mutex<()>,
    pending: Mutex<Option<Block>>,
    log: Arc<Mutex<BlockLog>>,
    peers: Vec<NodeClient>,
    leader_hint: Mutex<Option<Endpoint>>,
    flagged: Mutex<BTreeSet<Endpoint>>,
}

impl Node {
    /// Loads (and validates) the persisted chain in `data_dir`, or starts a
    /// fresh one from the configured genesis block.
    pub fn open(config: NodeConfig, endpoint: Endpoint) -> Result<Self, NodeError> {
        config.validate()?;
        let persisted = BlockLog::load(&config.data_dir)?;
        let fresh = persisted.is_empty();
        let blocks = if fresh { vec![config.genesis.clone()] } else { persisted };
        let chain = Chain {
            chain_id: config.chain_id.clone(),
            kind: config.chain_kind,
            validator_set: config.validator_identities.clone(),
            writers: config.writer_identities.clone(),
            blocks,
        };
        if let ValidationReport::Invalid { height, violation } = validate_chain(&chain) {
            let report = format!("height {height}: {violation}");
            return Err(if fresh {
                NodeError::Config(format!("genesis rejected: {report}"))
            } else {
                NodeError::CorruptStore(report)
            });
        }
        if chain.blocks[0] != config.genesis {
            return Err(NodeError::CorruptStore("persisted genesis differs from configuration".into()));
        }
        let mut log = BlockLog::open(&config.data_dir)?;
        if fresh {
            log.append(&config.genesis)?;
        }
        info!(node = %config.node_id, chain = %config.chain_id, height = chain.height(), "chain loaded");

        let http = http_client(Duration::from_millis(config.peer_timeout_ms));
        let peers = config
            .peer_endpoints
            .iter()
            .filter(|p| **p != endpoint)
            .map(|p| NodeClient::with_client(http.clone(), p.clone()))
            .collect();
        let authority = chain.authority();
        Ok(Node {
            endpoint,
            leading: AtomicBool::new(config.is_leader),
            authority,
            replica: RwLock::new(Replica::new(chain)),
            write_lock: tokio::sync::Mutex::new(()),
            pending: Mutex::new(None),
            log: Arc::new(Mutex::new(log)),
            peers,
            leader_hint: Mutex::new(None),
            flagged: Mutex::new(BTreeSet::new()),
            config,
        })
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn is_leader(&self) -> bool {
        self.leading.load(Ordering::SeqCst)
    }

    pub fn height(&self) -> u64 {
        self.replica.read().unwrap().chain.height()
    }

    pub fn pending_proposal(&self) -> Option<Block> {
        self.pending.lock().unwrap().clone()
    }

    pub fn flagged_peers(&self) -> Vec<Endpoint> {
        self.flagged.lock().unwrap().iter().cloned().collect()
    }

    /// Copy of the local chain.
    pub fn chain(&self) -> Chain {
        self.replica.read().unwrap().chain.clone()
    }

    pub fn health(&self) -> Health {
        let replica = self.replica.read().unwrap();
        Health {
            node_id: self.config.node_id.clone(),
            chain_id: self.config.chain_id.clone(),
            chain_kind: self.config.chain_kind,
            subject: replica.chain.subject().unwrap_or_default().to_string(),
            height: replica.chain.height(),
            is_leader: self.is_leader(),
            endpoint: self.endpoint.clone(),
        }
    }

    /// Locally committed blocks in `from..=to`, truncated at the committed height.
    pub fn read_blocks(&self, from: u64, to: u64) -> Result<BlockRange, NodeError> {
        if from > to {
            return Err(NodeError::Invalid(format!("from {from} exceeds to {to}")));
        }
        let replica = self.replica.read().unwrap();
        let high_water = replica.chain.height();
        let blocks = if from > high_water {
            Vec::new()
        } else {
            replica.chain.blocks[from as usize..=to.min(high_water) as usize].to_vec()
        };
        Ok(BlockRange { blocks, high_water })
    }

    /// Resolves a patient from the main-chain routing view.
    pub fn resolve(&self, patient_id: &str) -> Result<RoutingEntry, NodeError> {
        let replica = self.replica.read().unwrap();
        let view = replica
            .routing
            .as_ref()
            .ok_or_else(|| NodeError::Invalid("routing is served by main-chain nodes only".into()))?;
        view.resolve(patient_id)
            .cloned()
            .ok_or_else(|| NodeError::NotFound(format!("patient {patient_id} is not registered")))
    }

    pub fn routing_view(&self) -> Option<RoutingView> {
        self.replica.read().unwrap().routing.clone()
    }

    /// Admission of `tx` as the next block; the caller holds the write lock.
    fn admit(&self, replica: &Replica, tx: &Transaction) -> Result<(), NodeError> {
        if replica.tx_ids.contains(&tx.tx_id) {
            return Err(NodeError::Duplicate(tx.tx_id.to_hex()));
        }
        self.authority
            .check_tx(tx, replica.chain.height() + 1)
            .map_err(violation_error)?;
        if let Some(view) = replica.routing.as_ref() {
            let creator = self
                .authority
                .writer(&tx.creator)
                .ok_or_else(|| NodeError::Permission(format!("unknown creator {}", tx.creator)))?;
            federation::admit(view, tx, creator)?;
        }
        Ok(())
    }

    /// Accepts a client transaction: leaders commit it, followers forward it.
    pub async fn submit_transaction(&self, tx: Transaction) -> Result<Block, NodeError> {
        if self.is_leader() {
            self.lead(tx).await
        } else {
            let leader = self.find_leader().await?;
            match leader.submit(&tx).await {
                Err(NodeError::Transport(e)) => {
                    // Rediscover on the next attempt; the leader may have moved.
                    *self.leader_hint.lock().unwrap() = None;
                    Err(NodeError::Unavailable(format!("leader unreachable: {e}")))
                }
                other => other,
            }
        }
    }

    async fn lead(&self, tx: Transaction) -> Result<Block, NodeError> {
        let _guard = self.write_lock.lock().await;
        let mut block = {
            let replica = self.replica.read().unwrap();
            self.admit(&replica, &tx)?;
            let tip = replica.chain.tip().expect("chain has genesis");
            Block::new(tip.height + 1, tip.block_hash, tx)
        };
        block.add_commit_signature(block.endorse(&self.config.node_key));

        let need = self.authority.quorum();
        if !self.peers.is_empty() {
            let proposal = Proposal {
                block: block.clone(),
                leader_endpoint: self.endpoint.clone(),
            };
            let replies = join_all(self.peers.iter().map(|p| p.propose(&proposal))).await;
            let message = commit_message(&block.block_hash);
            for (peer, reply) in self.peers.iter().zip(replies) {
                match reply {
                    Ok(sig) => {
                        let valid = self
                            .authority
                            .validator_key(&sig.validator)
                            .is_some_and(|k| k.verify(&message, &sig.signature));
                        if valid {
                            block.add_commit_signature(sig);
                        } else {
                            warn!(peer = %peer.endpoint(), "discarding invalid endorsement");
                        }
                    }
                    Err(e) => debug!(peer = %peer.endpoint(), error = %e, "no endorsement"),
                }
            }
        }
        let have = block.commit_signatures.len();
        if have < need {
            return Err(NodeError::Unavailable(format!(
                "{have} of {} validators endorsed height {}, quorum is {need}",
                self.authority.validator_count(),
                block.height
            )));
        }

        self.apply_committed(block.clone()).await?;
        // Replicas acknowledge after persisting; unreachable ones catch up by sync.
        let acks = join_all(self.peers.iter().map(|p| p.commit(&block))).await;
        for (peer, ack) in self.peers.iter().zip(acks) {
            if let Err(e) = ack {
                debug!(peer = %peer.endpoint(), error = %e, "commit not acknowledged");
            }
        }
        Ok(block)
    }

    /// Validates, persists and appends a committed block. Caller holds the
    /// write lock.
    async fn apply_committed(&self, block: Block) -> Result<(), NodeError> {
        {
            let replica = self.replica.read().unwrap();
            self.authority
                .check_committed(replica.chain.tip(), &block)
                .map_err(violation_error)?;
            if replica.tx_ids.contains(&block.tx.tx_id) {
                return Err(NodeError::Duplicate(block.tx.tx_id.to_hex()));
            }
        }
        let log = Arc::clone(&self.log);
        let record = block.clone();
        tokio::task::spawn_blocking(move || log.lock().unwrap().append(&record))
            .await
            .map_err(|e| NodeError::Storage(e.to_string()))??;
        self.replica.write().unwrap().push(block);
        Ok(())
    }

    /// Follower side of a proposal: endorse it if it extends the local chain.
    pub async fn handle_propose(&self, proposal: Proposal) -> Result<CommitSignature, NodeError> {
        let _guard = self.write_lock.lock().await;
        *self.leader_hint.lock().unwrap() = Some(proposal.leader_endpoint.clone());
        let block = proposal.block;
        if block.height > self.height() + 1 {
            self.sync_locked(Some(&proposal.leader_endpoint)).await;
        }
        let replica = self.replica.read().unwrap();
        let height = replica.chain.height();
        if block.height <= height {
            let existing = &replica.chain.blocks[block.height as usize];
            return if existing.block_hash == block.block_hash {
                Ok(block.endorse(&self.config.node_key))
            } else {
                Err(NodeError::Conflict(format!("height {} already committed", block.height)))
            };
        }
        if block.height != height + 1 {
            return Err(NodeError::Conflict(format!(
                "proposal for height {} but local height is {height}",
                block.height
            )));
        }
        self.authority
            .check_header(replica.chain.tip(), &block)
            .map_err(violation_error)?;
        let endorsed = self.authority.check_endorsements(&block).map_err(violation_error)?;
        if endorsed == 0 {
            return Err(NodeError::Permission("proposal carries no validator endorsement".into()));
        }
        self.admit(&replica, &block.tx)?;
        drop(replica);
        let sig = block.endorse(&self.config.node_key);
        *self.pending.lock().unwrap() = Some(block);
        Ok(sig)
    }

    /// Follower side of a commit broadcast.
    pub async fn handle_commit(&self, block: Block) -> Result<u64, NodeError> {
        let _guard = self.write_lock.lock().await;
        if block.height > self.height() + 1 {
            self.sync_locked(None).await;
        }
        {
            let replica = self.replica.read().unwrap();
            let height = replica.chain.height();
            if block.height <= height {
                let existing = &replica.chain.blocks[block.height as usize];
                return if existing.block_hash == block.block_hash {
                    Ok(height)
                } else {
                    Err(NodeError::Conflict(format!("height {} already committed", block.height)))
                };
            }
        }
        self.apply_committed(block).await?;
        let mut pending = self.pending.lock().unwrap();
        if pending.as_ref().is_some_and(|p| p.height <= self.height()) {
            *pending = None;
        }
        Ok(self.height())
    }

    /// Makes this follower the chain's leader. The request must be signed
    /// with this node's own seat key.
    pub async fn promote(&self, promotion: &Promotion) -> Result<(), NodeError> {
        let _guard = self.write_lock.lock().await;
        if promotion.node_id != self.config.node_id {
            return Err(NodeError::Permission(format!("promotion names {}", promotion.node_id)));
        }
        let age = (Timestamp::now().millis() - promotion.issued_at.millis()).abs();
        if age > PROMOTION_WINDOW_MS {
            return Err(NodeError::Permission("stale promotion".into()));
        }
        let message = promotion_message(&self.config.chain_id, &promotion.node_id, promotion.issued_at);
        if !self.config.node_key.identity().public_key.verify(&message, &promotion.signature) {
            return Err(NodeError::Permission("promotion signature does not verify".into()));
        }
        if !self.leading.swap(true, Ordering::SeqCst) {
            info!(node = %self.config.node_id, chain = %self.config.chain_id, height = self.height(), "promoted to leader");
        }
        *self.leader_hint.lock().unwrap() = None;
        Ok(())
    }

    /// Pulls missing committed blocks from reachable peers.
    pub async fn sync_from_peers(&self) -> SyncReport {
        let _guard = self.write_lock.lock().await;
        self.sync_locked(None).await
    }

    async fn sync_locked(&self, prefer: Option<&Endpoint>) -> SyncReport {
        let start = self.height();
        let mut sources: Vec<NodeClient> = Vec::new();
        if let Some(ep) = prefer.cloned().or_else(|| self.leader_hint.lock().unwrap().clone()) {
            if let Some(p) = self.peers.iter().find(|p| *p.endpoint() == ep) {
                sources.push(p.clone());
            } else if ep != self.endpoint {
                sources.push(self.peers.first().map_or_else(
                    || NodeClient::new(ep.clone()),
                    |p| NodeClient::with_client(p.http().clone(), ep.clone()),
                ));
            }
        }
        for p in &self.peers {
            if !sources.iter().any(|s| s.endpoint() == p.endpoint()) {
                sources.push(p.clone());
            }
        }

        let mut reachable = 0;
        let mut flagged = Vec::new();
        'peers: for peer in &sources {
            let Ok(remote) = peer.height().await else {
                continue;
            };
            reachable += 1;
            while self.height() < remote {
                let from = self.height() + 1;
                let range = match peer.read_blocks(from, remote.min(from + SYNC_BATCH - 1)).await {
                    Ok(r) => r,
                    Err(_) => continue 'peers,
                };
                if range.blocks.is_empty() {
                    continue 'peers;
                }
                for block in range.blocks {
                    let height = block.height;
                    if let Err(e) = self.apply_committed(block).await {
                        warn!(peer = %peer.endpoint(), height, error = %e, "peer served an invalid block");
                        self.flagged.lock().unwrap().insert(peer.endpoint().clone());
                        flagged.push(peer.endpoint().clone());
                        continue 'peers;
                    }
                }
            }
        }
        let height = self.height();
        let status = if reachable == 0 && !sources.is_empty() {
            warn!(node = %self.config.node_id, "sync: no peers reachable");
            SyncStatus::NoPeersReachable
        } else {
            SyncStatus::Ok
        };
        SyncReport {
            status,
            height,
            advanced_by: height - start,
            reachable_peers: reachable,
            flagged_peers: flagged,
        }
    }

    async fn find_leader(&self) -> Result<NodeClient, NodeError> {
        let hint = self.leader_hint.lock().unwrap().clone();
        if let Some(ep) = hint {
            if let Some(p) = self.peers.iter().find(|p| *p.endpoint() == ep) {
                return Ok(p.clone());
            }
            return Ok(NodeClient::new(ep));
        }
        for peer in &self.peers {
            if let Ok(h) = peer.health().await {
                if h.is_leader {
                    *self.leader_hint.lock().unwrap() = Some(peer.endpoint().clone());
                    return Ok(peer.clone());
                }
            }
        }
        Err(NodeError::Unavailable("no reachable leader".into()))
    }
}
