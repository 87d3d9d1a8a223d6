//! Concrete service configurations derived from a [`TopologySpec`].
//!
//! Keys, tokens and genesis blocks are persisted under each institution's
//! data dir on first use, so bringing a topology up again over the same
//! directories replays the same chains.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context, Result};
use pht_core::connector::{ConnectorConfig, ConnectorMode};
use pht_core::gateway::GatewayConfig;
use pht_core::ledger::{ActorId, Block, ChainKind, Credential, CredentialFile, Identity, Role, Timestamp};
use pht_core::net::{free_loopback_ports, Endpoint};
use pht_core::node::NodeConfig;
use pht_core::resources::StoreConfig;
use rand::RngCore;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::topology::{
    InstitutionSpec, TopologySpec, GATEWAY_OFFSET, MAIN_NODE_OFFSET, PATIENT_NODE_OFFSET, RESOURCES_OFFSET,
};

pub const MAIN_CHAIN_ID: &str = "main";
pub const MAIN_SUBJECT: &str = "main";
const FOLLOWER_SYNC_MS: u64 = 500;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstitutionPlan {
    pub name: String,
    pub data_dir: PathBuf,
    pub base_port: u16,
    /// Identity the institution's applications sign with.
    pub credential: Credential,
    pub store: StoreConfig,
    pub store_token: String,
    pub main_node: NodeConfig,
    pub gateway: GatewayConfig,
    pub gateway_token: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PatientPlan {
    pub patient_id: String,
    pub home: String,
    /// Validators of the patient chain; the first one leads.
    pub nodes: Vec<NodeConfig>,
}

impl PatientPlan {
    pub fn leader(&self) -> &NodeConfig {
        &self.nodes[0]
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum ServiceConfig {
    Store(StoreConfig),
    Node(Box<NodeConfig>),
    Gateway(Box<GatewayConfig>),
}

impl ServiceConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ServiceConfig::Store(_) => "resources",
            ServiceConfig::Node(_) => "node",
            ServiceConfig::Gateway(_) => "gateway",
        }
    }

    pub fn endpoint(&self) -> &Endpoint {
        match self {
            ServiceConfig::Store(c) => &c.listen_endpoint,
            ServiceConfig::Node(c) => &c.listen_endpoint,
            ServiceConfig::Gateway(c) => &c.bind_endpoint,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub name: String,
    pub config: ServiceConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Plan {
    pub institutions: Vec<InstitutionPlan>,
    pub patients: Vec<PatientPlan>,
}

fn load_or_create<T: Serialize + DeserializeOwned>(path: &Path, make: impl FnOnce() -> Result<T>) -> Result<T> {
    if let Ok(text) = fs::read_to_string(path) {
        return serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()));
    }
    let value = make()?;
    fs::create_dir_all(path.parent().expect("file path has a parent"))?;
    fs::write(path, serde_json::to_vec_pretty(&value)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(value)
}

fn credential(dir: &Path, actor: &str, role: Role) -> Result<Credential> {
    let path = dir.join("keys").join(format!("{actor}.json"));
    let file: CredentialFile = load_or_create(&path, || {
        Ok(CredentialFile::from(&Credential::generate(ActorId::new(actor)?, role)))
    })?;
    Ok(Credential::try_from(file)?)
}

fn token(dir: &Path, name: &str) -> Result<String> {
    load_or_create(&dir.join("keys").join(format!("{name}.token.json")), || {
        let mut raw = [0u8; 24];
        rand::rngs::OsRng.fill_bytes(&mut raw);
        Ok(format!("{name}-{}", hex_lower(&raw)))
    })
}

fn hex_lower(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn genesis(dir: &Path, chain_id: &str, subject: &str, creator: &Credential) -> Result<Block> {
    load_or_create(&dir.join("genesis").join(format!("{chain_id}.json")), || {
        Ok(Block::genesis(chain_id, subject, creator, Timestamp::now())?)
    })
}

/// A free loopback port not handed out before by this process.
fn fresh_port() -> Result<u16> {
    static ISSUED: Mutex<BTreeSet<u16>> = Mutex::new(BTreeSet::new());
    let mut issued = ISSUED.lock().unwrap();
    for _ in 0..64 {
        let port = free_loopback_ports(1)?[0];
        if issued.insert(port) {
            return Ok(port);
        }
    }
    bail!("no fresh loopback port found")
}

/// Hands out ports for one institution: fixed offsets from its base port,
/// or free loopback ports when the base is 0.
struct Ports {
    base: u16,
    next_patient: u16,
}

impl Ports {
    fn at(&self, offset: u16) -> Result<Endpoint> {
        if self.base == 0 {
            return Ok(Endpoint::loopback(fresh_port()?));
        }
        let port = self.base.checked_add(offset).ok_or_else(|| anyhow!("port overflow"))?;
        Ok(Endpoint::loopback(port))
    }

    fn patient_node(&mut self) -> Result<Endpoint> {
        let ep = self.at(PATIENT_NODE_OFFSET + self.next_patient)?;
        self.next_patient += 1;
        Ok(ep)
    }
}

fn seat_name(institution: &str, patient_id: &str, seat: usize) -> String {
    format!("{}.{patient_id}.v{seat}", institution.to_lowercase())
}

impl Plan {
    pub fn derive(spec: &TopologySpec) -> Result<Plan> {
        spec.validate()?;
        let creds: Vec<Credential> = spec
            .institutions
            .iter()
            .map(|i| credential(&i.data_dir, &i.name, Role::Institution))
            .collect::<Result<_>>()?;
        let writers: Vec<Identity> = creds.iter().map(|c| c.identity().clone()).collect();
        let main_keys: Vec<Credential> = spec
            .institutions
            .iter()
            .map(|i| credential(&i.data_dir, &format!("{}.main", i.name.to_lowercase()), Role::Institution))
            .collect::<Result<_>>()?;
        let main_genesis = genesis(&spec.institutions[0].data_dir, MAIN_CHAIN_ID, MAIN_SUBJECT, &creds[0])?;

        let mut ports: BTreeMap<&str, Ports> = spec
            .institutions
            .iter()
            .map(|i| {
                (
                    i.name.as_str(),
                    Ports {
                        base: i.base_port,
                        next_patient: 0,
                    },
                )
            })
            .collect();
        let main_endpoints: Vec<Endpoint> = spec
            .institutions
            .iter()
            .map(|i| ports[i.name.as_str()].at(MAIN_NODE_OFFSET))
            .collect::<Result<_>>()?;

        let mut institutions = Vec::new();
        for (idx, inst) in spec.institutions.iter().enumerate() {
            let p = &ports[inst.name.as_str()];
            let main_node = NodeConfig {
                node_id: main_keys[idx].actor_id().clone(),
                chain_id: MAIN_CHAIN_ID.into(),
                chain_kind: ChainKind::Main,
                listen_endpoint: main_endpoints[idx].clone(),
                peer_endpoints: main_endpoints.clone(),
                validator_identities: main_keys.iter().map(|k| k.identity().clone()).collect(),
                writer_identities: writers.clone(),
                data_dir: inst.data_dir.join("chains").join(MAIN_CHAIN_ID),
                is_leader: idx == 0,
                node_key: main_keys[idx].clone(),
                genesis: main_genesis.clone(),
                sync_interval_ms: if idx == 0 { 0 } else { FOLLOWER_SYNC_MS },
                peer_timeout_ms: 3_000,
            };
            let store_token = token(&inst.data_dir, "store")?;
            let gateway_token = token(&inst.data_dir, "gateway")?;
            institutions.push(InstitutionPlan {
                name: inst.name.clone(),
                data_dir: inst.data_dir.clone(),
                base_port: inst.base_port,
                credential: creds[idx].clone(),
                store: StoreConfig {
                    listen_endpoint: p.at(RESOURCES_OFFSET)?,
                    data_dir: inst.data_dir.join("resources"),
                    auth_tokens: vec![store_token.clone()],
                },
                store_token,
                gateway: GatewayConfig {
                    bind_endpoint: p.at(GATEWAY_OFFSET)?,
                    connector: ConnectorConfig {
                        mode: ConnectorMode::ViaMain,
                        target_endpoint: main_endpoints[idx].clone(),
                        credential: creds[idx].clone(),
                    },
                    auth_tokens: vec![gateway_token.clone()],
                },
                gateway_token,
                main_node,
            });
        }

        let mut plan = Plan {
            institutions,
            patients: Vec::new(),
        };
        for patient in &spec.patients {
            let home = spec.institution(&patient.home_institution).expect("validated");
            let p = ports.get_mut(home.name.as_str()).expect("validated");
            let pp = plan.patient_plan(&patient.patient_id, home, 1 + patient.extra_validator_count, p)?;
            plan.patients.push(pp);
        }
        Ok(plan)
    }

    fn patient_plan(
        &self,
        patient_id: &str,
        home: &InstitutionSpec,
        validators: usize,
        ports: &mut Ports,
    ) -> Result<PatientPlan> {
        let home_plan = self.institution(&home.name)?;
        let keys: Vec<Credential> = (0..validators)
            .map(|seat| credential(&home.data_dir, &seat_name(&home.name, patient_id, seat), Role::Institution))
            .collect::<Result<_>>()?;
        let endpoints: Vec<Endpoint> = (0..validators).map(|_| ports.patient_node()).collect::<Result<_>>()?;
        let genesis = genesis(&home.data_dir, patient_id, patient_id, &home_plan.credential)?;
        let writers: Vec<Identity> = self.institutions.iter().map(|i| i.credential.identity().clone()).collect();
        let nodes = (0..validators)
            .map(|seat| NodeConfig {
                node_id: keys[seat].actor_id().clone(),
                chain_id: patient_id.to_string(),
                chain_kind: ChainKind::Patient,
                listen_endpoint: endpoints[seat].clone(),
                peer_endpoints: endpoints.clone(),
                validator_identities: keys.iter().map(|k| k.identity().clone()).collect(),
                writer_identities: writers.clone(),
                data_dir: home.data_dir.join("chains").join(patient_id).join(format!("v{seat}")),
                is_leader: seat == 0,
                node_key: keys[seat].clone(),
                genesis: genesis.clone(),
                sync_interval_ms: if seat == 0 { 0 } else { FOLLOWER_SYNC_MS },
                peer_timeout_ms: 3_000,
            })
            .collect();
        Ok(PatientPlan {
            patient_id: patient_id.to_string(),
            home: home.name.clone(),
            nodes,
        })
    }

    /// Plans one more patient chain homed at `home` with `validators` nodes.
    pub fn add_patient(&mut self, patient_id: &str, home: &str, validators: usize) -> Result<&PatientPlan> {
        if validators == 0 {
            bail!("a patient chain needs at least one validator");
        }
        if self.patient(patient_id).is_ok() {
            bail!("patient {patient_id} already planned");
        }
        let inst = self.institution(home)?;
        let spec = InstitutionSpec {
            name: inst.name.clone(),
            base_port: inst.base_port,
            data_dir: inst.data_dir.clone(),
        };
        let mut ports = Ports {
            base: inst.base_port,
            next_patient: self.patient_nodes_at(home) as u16,
        };
        let pp = self.patient_plan(patient_id, &spec, validators, &mut ports)?;
        self.patients.push(pp);
        Ok(self.patients.last().expect("just pushed"))
    }

    /// Patient-chain nodes currently planned at `institution`.
    fn patient_nodes_at(&self, institution: &str) -> usize {
        let inst = self.institution(institution).ok();
        let prefix = inst.map(|i| i.data_dir.join("chains"));
        self.patients
            .iter()
            .flat_map(|p| &p.nodes)
            .filter(|n| prefix.as_ref().is_some_and(|pre| n.data_dir.starts_with(pre)))
            .count()
    }

    /// Config of a node at `to` that takes over `patient_id`'s leader seat.
    /// It starts as a follower of the current leader.
    pub fn relocation_target(&self, patient_id: &str, to: &str) -> Result<NodeConfig> {
        let patient = self.patient(patient_id)?;
        let dest = self.institution(to)?;
        if patient.home == to {
            bail!("{patient_id} is already homed at {to}");
        }
        let mut ports = Ports {
            base: dest.base_port,
            next_patient: self.patient_nodes_at(to) as u16,
        };
        let old = patient.leader();
        let mut node = old.clone();
        node.listen_endpoint = ports.patient_node()?;
        node.data_dir = dest.data_dir.join("chains").join(patient_id).join("v0");
        node.is_leader = false;
        node.sync_interval_ms = 0;
        node.peer_endpoints = std::iter::once(old.listen_endpoint.clone())
            .chain(patient.nodes[1..].iter().map(|n| n.listen_endpoint.clone()))
            .collect();
        Ok(node)
    }

    pub fn institution(&self, name: &str) -> Result<&InstitutionPlan> {
        self.institutions
            .iter()
            .find(|i| i.name == name)
            .ok_or_else(|| anyhow!("unknown institution {name}"))
    }

    pub fn patient(&self, patient_id: &str) -> Result<&PatientPlan> {
        self.patients
            .iter()
            .find(|p| p.patient_id == patient_id)
            .ok_or_else(|| anyhow!("unknown patient {patient_id}"))
    }

    pub fn patient_mut(&mut self, patient_id: &str) -> Result<&mut PatientPlan> {
        self.patients
            .iter_mut()
            .find(|p| p.patient_id == patient_id)
            .ok_or_else(|| anyhow!("unknown patient {patient_id}"))
    }

    pub fn main_endpoint(&self, institution: &str) -> Result<Endpoint> {
        Ok(self.institution(institution)?.main_node.listen_endpoint.clone())
    }

    /// Service names and configs, in start order.
    pub fn services(&self) -> Vec<ServiceSpec> {
        let mut out = Vec::new();
        for i in &self.institutions {
            out.push(ServiceSpec {
                name: format!("{}.resources", i.name.to_lowercase()),
                config: ServiceConfig::Store(i.store.clone()),
            });
        }
        for i in &self.institutions {
            out.push(ServiceSpec {
                name: format!("{}.main", i.name.to_lowercase()),
                config: ServiceConfig::Node(Box::new(i.main_node.clone())),
            });
        }
        for p in &self.patients {
            out.extend(p.nodes.iter().map(|n| ServiceSpec {
                name: n.node_id.to_string(),
                config: ServiceConfig::Node(Box::new(n.clone())),
            }));
        }
        out
    }

    pub fn gateway_services(&self) -> Vec<ServiceSpec> {
        self.institutions
            .iter()
            .map(|i| ServiceSpec {
                name: format!("{}.gateway", i.name.to_lowercase()),
                config: ServiceConfig::Gateway(Box::new(i.gateway.clone())),
            })
            .collect()
    }
}
