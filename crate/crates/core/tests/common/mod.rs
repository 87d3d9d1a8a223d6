#![allow(dead_code)]

use std::path::PathBuf;

use pht_core::ledger::{ActorId, Block, ChainKind, Credential, Description, Role, Timestamp, Transaction, TxKind};
use pht_core::net::{free_loopback_ports, Endpoint};
use pht_core::node::{spawn_node, NodeClient, NodeConfig, NodeHandle};
use tempfile::TempDir;

pub fn credential(id: &str, role: Role) -> Credential {
    Credential::generate(ActorId::new(id).unwrap(), role)
}

/// A fully meshed chain with `n` validators on loopback; member 0 leads.
pub struct Cluster {
    pub configs: Vec<NodeConfig>,
    pub handles: Vec<Option<NodeHandle>>,
    pub writer: Credential,
    _dir: TempDir,
}

impl Cluster {
    pub fn configs(n: usize, kind: ChainKind, writer: &Credential, dir: &std::path::Path) -> Vec<NodeConfig> {
        let keys: Vec<Credential> = (0..n).map(|i| credential(&format!("v{i}"), Role::Institution)).collect();
        let ports = free_loopback_ports(n).unwrap();
        let endpoints: Vec<Endpoint> = ports.iter().map(|p| Endpoint::loopback(*p)).collect();
        let genesis = Block::genesis("test-chain", "paula", writer, Timestamp(1_700_000_000_000)).unwrap();
        (0..n)
            .map(|i| NodeConfig {
                node_id: keys[i].actor_id().clone(),
                chain_id: "test-chain".into(),
                chain_kind: kind,
                listen_endpoint: endpoints[i].clone(),
                peer_endpoints: endpoints.clone(),
                validator_identities: keys.iter().map(|k| k.identity().clone()).collect(),
                writer_identities: vec![writer.identity().clone()],
                data_dir: dir.join(format!("v{i}")),
                is_leader: i == 0,
                node_key: keys[i].clone(),
                genesis: genesis.clone(),
                sync_interval_ms: 0,
                peer_timeout_ms: 1_000,
            })
            .collect()
    }

    pub async fn start(n: usize, kind: ChainKind) -> Cluster {
        let dir = tempfile::tempdir().unwrap();
        let writer = credential("ES", Role::Institution);
        let configs = Self::configs(n, kind, &writer, dir.path());
        let mut handles = Vec::new();
        for c in &configs {
            handles.push(Some(spawn_node(c.clone()).await.unwrap()));
        }
        Cluster {
            configs,
            handles,
            writer,
            _dir: dir,
        }
    }

    pub fn client(&self, i: usize) -> NodeClient {
        NodeClient::new(self.configs[i].listen_endpoint.clone())
    }

    pub fn data_dir(&self, i: usize) -> PathBuf {
        self.configs[i].data_dir.clone()
    }

    pub async fn stop(&mut self, i: usize) {
        if let Some(h) = self.handles[i].take() {
            h.shutdown().await;
        }
    }

    pub async fn restart(&mut self, i: usize) {
        self.stop(i).await;
        self.handles[i] = Some(spawn_node(self.configs[i].clone()).await.unwrap());
    }

    pub async fn shutdown(mut self) {
        for i in 0..self.handles.len() {
            self.stop(i).await;
        }
    }
}

pub fn add_tx(writer: &Credential, n: u64) -> Transaction {
    let desc = Description::new()
        .with("ref_url", format!("http://127.0.0.1:1/resources/{n}"))
        .with("n", n.to_string());
    Transaction::signed(TxKind::Add, desc, writer, Timestamp(1_700_000_000_000 + n as i64)).unwrap()
}

/// Main chain (one node), a patient chain for "paula" with `validators`
/// nodes, and one evidence store; ES and CN are the writing institutions.
pub struct MiniFederation {
    pub es: Credential,
    pub cn: Credential,
    pub main: NodeHandle,
    pub patient: Vec<Option<NodeHandle>>,
    pub patient_configs: Vec<NodeConfig>,
    pub store: pht_core::resources::StoreHandle,
    pub dir: TempDir,
}

pub const STORE_TOKEN: &str = "store-token";

impl MiniFederation {
    pub async fn start(validators: usize) -> MiniFederation {
        use pht_core::federation::FederationClient;
        use pht_core::resources::{spawn_store, StoreConfig};

        let dir = tempfile::tempdir().unwrap();
        let es = credential("ES", Role::Institution);
        let cn = credential("CN", Role::Institution);
        let writers = vec![es.identity().clone(), cn.identity().clone()];

        let main_key = credential("main.es", Role::Institution);
        let main = spawn_node(NodeConfig {
            node_id: main_key.actor_id().clone(),
            chain_id: "main".into(),
            chain_kind: ChainKind::Main,
            listen_endpoint: Endpoint::loopback(0),
            peer_endpoints: vec![],
            validator_identities: vec![main_key.identity().clone()],
            writer_identities: writers.clone(),
            data_dir: dir.path().join("main"),
            is_leader: true,
            node_key: main_key.clone(),
            genesis: Block::genesis("main", "federation", &es, Timestamp(1_700_000_000_000)).unwrap(),
            sync_interval_ms: 0,
            peer_timeout_ms: 1_000,
        })
        .await
        .unwrap();

        let mut patient_configs = Cluster::configs(validators, ChainKind::Patient, &es, dir.path());
        for c in &mut patient_configs {
            c.writer_identities = writers.clone();
        }
        let mut patient = Vec::new();
        for c in &patient_configs {
            patient.push(Some(spawn_node(c.clone()).await.unwrap()));
        }

        let store = spawn_store(StoreConfig {
            listen_endpoint: Endpoint::loopback(0),
            data_dir: dir.path().join("store"),
            auth_tokens: vec![STORE_TOKEN.into()],
        })
        .await
        .unwrap();

        FederationClient::new(main.endpoint().clone())
            .register_patient("paula", &patient_configs[0].listen_endpoint, &es)
            .await
            .unwrap();

        MiniFederation {
            es,
            cn,
            main,
            patient,
            patient_configs,
            store,
            dir,
        }
    }

    pub fn patient_endpoint(&self) -> Endpoint {
        self.patient_configs[0].listen_endpoint.clone()
    }

    pub fn store_client(&self) -> pht_core::resources::ResourcesClient {
        pht_core::resources::ResourcesClient::new(self.store.endpoint().clone(), STORE_TOKEN)
    }

    pub async fn stop_patient(&mut self, i: usize) {
        if let Some(h) = self.patient[i].take() {
            h.shutdown().await;
        }
    }

    pub async fn shutdown(mut self) {
        for i in 0..self.patient.len() {
            self.stop_patient(i).await;
        }
        self.main.shutdown().await;
        self.store.shutdown().await;
    }
}

pub fn unused_port() -> u16 {
    free_loopback_ports(1).unwrap()[0]
}

/// A committed chain built in memory: `validators` keys, one writer, blocks
/// endorsed by `endorsers(height)` validators (at least quorum).
pub fn build_chain(
    validators: usize,
    writers: &[Credential],
    length: usize,
    endorsers: impl Fn(u64) -> usize,
) -> (pht_core::ledger::Chain, Vec<Credential>) {
    use pht_core::ledger::Chain;
    let keys: Vec<Credential> = (0..validators).map(|i| credential(&format!("v{i}"), Role::Institution)).collect();
    let genesis = Block::genesis("props", "paula", &writers[0], Timestamp(1)).unwrap();
    let mut chain = Chain::new(
        "props",
        ChainKind::Patient,
        keys.iter().map(|k| k.identity().clone()).collect(),
        writers.iter().map(|w| w.identity().clone()).collect(),
        genesis,
    )
    .unwrap();
    for h in 1..length as u64 {
        let w = &writers[h as usize % writers.len()];
        let kind = [TxKind::Add, TxKind::Modify, TxKind::Delete][h as usize % 3];
        let desc = Description::new().with("ref_url", format!("http://s:1/resources/{h}")).with("seq", h.to_string());
        let tx = Transaction::signed(kind, desc, w, Timestamp(1 + h as i64)).unwrap();
        let tip = chain.tip().unwrap();
        let mut block = Block::new(h, tip.block_hash, tx);
        for k in keys.iter().take(endorsers(h).clamp(pht_core::ledger::quorum(validators), validators)) {
            block.add_commit_signature(block.endorse(k));
        }
        chain.append(block).unwrap();
    }
    (chain, keys)
}
