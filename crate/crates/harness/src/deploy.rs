//! A running topology: bring-up, per-service control and teardown.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use pht_core::connector::{Connector, ConnectorConfig, ConnectorMode};
use pht_core::federation::{FederationClient, FederationError};
use pht_core::gateway::GatewayClient;
use pht_core::ledger::Digest;
use pht_core::net::Endpoint;
use pht_core::node::NodeClient;
use pht_core::resources::ResourcesClient;
use serde::{Deserialize, Serialize};

use crate::launcher::{self, ChildRecord, Launcher, Running, Service};
use crate::plan::{Plan, ServiceSpec};
use crate::topology::TopologySpec;

pub const STATE_FILE: &str = "state.json";

/// What `pht up` leaves behind for later commands.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StateFile {
    /// Digest of the topology file the plan was derived from.
    pub spec_digest: String,
    pub plan: Plan,
    pub services: Vec<ChildRecord>,
}

impl StateFile {
    pub fn path(state_dir: &Path) -> PathBuf {
        state_dir.join(STATE_FILE)
    }

    pub fn load(state_dir: &Path) -> Result<Option<StateFile>> {
        let path = Self::path(state_dir);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(Some(
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
            )),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e).with_context(|| format!("reading {}", path.display())),
        }
    }

    pub fn save(&self, state_dir: &Path) -> Result<()> {
        fs::create_dir_all(state_dir)?;
        let path = Self::path(state_dir);
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        fs::rename(&tmp, &path).with_context(|| format!("writing {}", path.display()))
    }

    pub fn is_live(&self) -> bool {
        !self.services.is_empty() && self.services.iter().any(launcher::is_running)
    }
}

pub fn spec_digest(spec: &TopologySpec) -> String {
    Digest::of(&serde_json::to_vec(spec).expect("spec serializes")).to_hex()
}

#[derive(Clone, Copy, Debug)]
pub struct BringUp {
    /// Record each planned patient on the main chain.
    pub register: bool,
    pub gateways: bool,
}

impl Default for BringUp {
    fn default() -> Self {
        BringUp {
            register: true,
            gateways: true,
        }
    }
}

pub struct Topology {
    pub plan: Plan,
    launcher: Launcher,
    services: BTreeMap<String, Service>,
    /// Start order, for orderly teardown in reverse.
    order: Vec<String>,
}

impl Topology {
    /// Starts every planned service, registers patients and starts the
    /// gateways. Any failure stops what was started.
    pub async fn bring_up(plan: Plan, launcher: Launcher, options: BringUp) -> Result<Topology> {
        let mut topo = Topology {
            plan,
            launcher,
            services: BTreeMap::new(),
            order: Vec::new(),
        };
        match topo.start_all(options).await {
            Ok(()) => Ok(topo),
            Err(e) => {
                topo.teardown().await;
                Err(e.context("bring-up failed; started services were stopped"))
            }
        }
    }

    async fn start_all(&mut self, options: BringUp) -> Result<()> {
        for spec in self.plan.services() {
            self.launch(&spec).await?;
        }
        if options.register {
            for pid in self.plan.patients.iter().map(|p| p.patient_id.clone()).collect::<Vec<_>>() {
                self.register(&pid).await?;
            }
        }
        if options.gateways {
            for spec in self.plan.gateway_services() {
                self.launch(&spec).await?;
            }
        }
        Ok(())
    }

    /// Reattaches to the child processes recorded by `pht up`.
    pub fn attach(state: StateFile, exe: PathBuf, state_dir: PathBuf) -> Result<Topology> {
        let mut services = BTreeMap::new();
        let mut order = Vec::new();
        for record in state.services {
            if !launcher::is_running(&record) {
                bail!("{} (pid {}) is no longer running; see {}", record.name, record.pid, record.log.display());
            }
            order.push(record.name.clone());
            services.insert(
                record.name.clone(),
                Service {
                    name: record.name.clone(),
                    endpoint: record.endpoint.clone(),
                    running: Running::Child(record),
                },
            );
        }
        Ok(Topology {
            plan: state.plan,
            launcher: Launcher::Processes { exe, state_dir },
            services,
            order,
        })
    }

    pub fn state(&self, spec_digest: String) -> StateFile {
        StateFile {
            spec_digest,
            plan: self.plan.clone(),
            services: self
                .order
                .iter()
                .filter_map(|n| self.services.get(n).and_then(Service::child).cloned())
                .collect(),
        }
    }

    pub fn launcher(&self) -> &Launcher {
        &self.launcher
    }

    pub async fn launch(&mut self, spec: &ServiceSpec) -> Result<Endpoint> {
        if self.services.contains_key(&spec.name) {
            bail!("{} is already running", spec.name);
        }
        let service = self.launcher.launch(spec).await?;
        let endpoint = service.endpoint.clone();
        self.order.push(spec.name.clone());
        self.services.insert(spec.name.clone(), service);
        Ok(endpoint)
    }

    /// Puts `patient_id` on the main chain at its planned leader endpoint:
    /// REGISTER if unknown, RELOCATE if recorded elsewhere, nothing if current.
    pub async fn register(&self, patient_id: &str) -> Result<()> {
        let patient = self.plan.patient(patient_id)?;
        let home = self.plan.institution(&patient.home)?;
        let endpoint = &patient.leader().listen_endpoint;
        let federation = FederationClient::new(home.main_node.listen_endpoint.clone());
        let outcome: Result<(), FederationError> = match federation.resolve_patient(patient_id).await {
            Ok(current) if &current == endpoint => Ok(()),
            Ok(_) => federation.relocate_patient(patient_id, endpoint, &home.credential).await.map(drop),
            Err(FederationError::NotFound(_)) => {
                federation.register_patient(patient_id, endpoint, &home.credential).await.map(drop)
            }
            Err(e) => Err(e),
        };
        outcome
        .with_context(|| format!("registering {patient_id} at {endpoint}"))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(String::as_str)
    }

    pub fn endpoint(&self, name: &str) -> Result<Endpoint> {
        self.services
            .get(name)
            .map(|s| s.endpoint.clone())
            .ok_or_else(|| anyhow!("no running service {name}"))
    }

    pub fn is_running(&self, name: &str) -> bool {
        self.services.contains_key(name)
    }

    pub async fn stop(&mut self, name: &str) -> Result<()> {
        let service = self.services.remove(name).ok_or_else(|| anyhow!("no running service {name}"))?;
        self.order.retain(|n| n != name);
        service.stop().await;
        Ok(())
    }

    /// Renames a running service, e.g. once a moved seat takes its place.
    pub fn rename(&mut self, from: &str, to: &str) -> Result<()> {
        let mut service = self.services.remove(from).ok_or_else(|| anyhow!("no running service {from}"))?;
        service.name = to.to_string();
        if let Running::Child(c) = &mut service.running {
            c.name = to.to_string();
        }
        for n in &mut self.order {
            if n == from {
                *n = to.to_string();
            }
        }
        self.services.insert(to.to_string(), service);
        Ok(())
    }

    /// Stops every service, newest first.
    pub async fn teardown(&mut self) {
        while let Some(name) = self.order.pop() {
            if let Some(service) = self.services.remove(&name) {
                service.stop().await;
            }
        }
    }

    pub fn store_name(institution: &str) -> String {
        format!("{}.resources", institution.to_lowercase())
    }

    pub fn main_name(institution: &str) -> String {
        format!("{}.main", institution.to_lowercase())
    }

    pub fn gateway_name(institution: &str) -> String {
        format!("{}.gateway", institution.to_lowercase())
    }

    pub fn store_client(&self, institution: &str) -> Result<ResourcesClient> {
        let inst = self.plan.institution(institution)?;
        Ok(ResourcesClient::new(inst.store.listen_endpoint.clone(), &inst.store_token))
    }

    pub fn gateway_client(&self, institution: &str) -> Result<GatewayClient> {
        let inst = self.plan.institution(institution)?;
        Ok(GatewayClient::new(inst.gateway.bind_endpoint.clone(), &inst.gateway_token))
    }

    pub fn main_client(&self, institution: &str) -> Result<NodeClient> {
        Ok(NodeClient::new(self.plan.main_endpoint(institution)?))
    }

    /// Doctor-side connector of `institution`, routing through its main node.
    pub async fn connector(&self, institution: &str) -> Result<Connector> {
        let inst = self.plan.institution(institution)?;
        let config = ConnectorConfig {
            mode: ConnectorMode::ViaMain,
            target_endpoint: inst.main_node.listen_endpoint.clone(),
            credential: inst.credential.clone(),
        };
        Connector::connect(config)
            .await
            .with_context(|| format!("connecting {institution}'s connector"))
    }

    /// Waits until every node of `patient_id` reports the leader's height.
    pub async fn settle(&self, patient_id: &str, timeout: Duration) -> Result<u64> {
        let patient = self.plan.patient(patient_id)?;
        let leader = NodeClient::new(patient.leader().listen_endpoint.clone()).height().await?;
        let deadline = tokio::time::Instant::now() + timeout;
        for node in &patient.nodes {
            let client = NodeClient::new(node.listen_endpoint.clone());
            loop {
                if client.height().await? >= leader {
                    break;
                }
                if tokio::time::Instant::now() > deadline {
                    bail!("{} did not reach height {leader}", node.node_id);
                }
                client.sync().await?;
            }
        }
        Ok(leader)
    }
}
