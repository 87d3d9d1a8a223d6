//! Moving a patient's chain to another institution: deploy a node there,
//! sync it, record RELOCATE, retire the old node and hand over leadership.

use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use pht_core::connector::{Connector, TrajectoryEntry};
use pht_core::federation::FederationClient;
use pht_core::net::Endpoint;
use pht_core::node::{NodeClient, Promotion};
use serde::Serialize;

use crate::deploy::Topology;
use crate::plan::{ServiceConfig, ServiceSpec};

const SYNC_TIMEOUT: Duration = Duration::from_secs(30);
const READ_INTERVAL: Duration = Duration::from_millis(10);

#[derive(Clone, Debug, Default, Serialize)]
pub struct ReadProbe {
    pub attempted: u64,
    pub failed: u64,
    pub first_error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RelocationReport {
    pub patient_id: String,
    pub from: String,
    pub to: String,
    pub old_endpoint: Endpoint,
    pub new_endpoint: Endpoint,
    pub height: u64,
    pub dump_bytes: usize,
    pub dumps_identical: bool,
    pub resolution_updated: bool,
    pub trajectory_unchanged: bool,
    pub reads: ReadProbe,
    pub seconds: f64,
}

impl RelocationReport {
    pub fn passed(&self) -> bool {
        self.dumps_identical && self.resolution_updated && self.trajectory_unchanged && self.reads.failed == 0
    }
}

impl fmt::Display for RelocationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = |ok: bool| if ok { "ok" } else { "FAILED" };
        writeln!(
            f,
            "{} moved {} -> {} ({} -> {})",
            self.patient_id, self.from, self.to, self.old_endpoint, self.new_endpoint
        )?;
        writeln!(
            f,
            "chain dump old vs new ({} blocks, {} bytes): {}",
            self.height + 1,
            self.dump_bytes,
            if self.dumps_identical { "byte-identical" } else { "DIFFERENT" }
        )?;
        writeln!(f, "resolution from every main-chain node: {}", mark(self.resolution_updated))?;
        writeln!(f, "trajectory from every institution unchanged: {}", mark(self.trajectory_unchanged))?;
        writeln!(
            f,
            "reads during relocation: {} attempted, {} failed{}",
            self.reads.attempted,
            self.reads.failed,
            self.reads.first_error.as_deref().map(|e| format!(" (first: {e})")).unwrap_or_default()
        )?;
        write!(f, "relocation {} in {:.2}s", if self.passed() { "PASS" } else { "FAIL" }, self.seconds)
    }
}

/// Reads the trajectory through every institution in a loop until stopped.
struct Reader {
    stop: Arc<AtomicBool>,
    task: tokio::task::JoinHandle<ReadProbe>,
}

impl Reader {
    fn start(connectors: Vec<Connector>, patient_id: String) -> Reader {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let task = tokio::spawn(async move {
            let attempted = AtomicU64::new(0);
            let failed = AtomicU64::new(0);
            let first = Mutex::new(None);
            while !flag.load(Ordering::SeqCst) {
                for c in &connectors {
                    attempted.fetch_add(1, Ordering::Relaxed);
                    if let Err(e) = c.get_trajectory(Some(&patient_id)).await {
                        failed.fetch_add(1, Ordering::Relaxed);
                        first.lock().unwrap().get_or_insert_with(|| e.to_string());
                    }
                }
                tokio::time::sleep(READ_INTERVAL).await;
            }
            ReadProbe {
                attempted: attempted.into_inner(),
                failed: failed.into_inner(),
                first_error: first.into_inner().unwrap(),
            }
        });
        Reader { stop, task }
    }

    async fn finish(self) -> ReadProbe {
        self.stop.store(true, Ordering::SeqCst);
        self.task.await.unwrap_or_else(|e| ReadProbe {
            attempted: 0,
            failed: 1,
            first_error: Some(e.to_string()),
        })
    }
}

async fn trajectories(topo: &Topology, patient_id: &str) -> Result<Vec<Vec<TrajectoryEntry>>> {
    let mut out = Vec::new();
    for inst in &topo.plan.institutions {
        let c = topo.connector(&inst.name).await?;
        out.push(c.get_trajectory(Some(patient_id)).await.with_context(|| format!("reading via {}", inst.name))?);
    }
    Ok(out)
}

fn first_difference(a: &str, b: &str) -> String {
    let line = a.lines().zip(b.lines()).position(|(x, y)| x != y);
    match line {
        Some(i) => format!("first differing record at line {}:\n- {}\n+ {}", i + 1, a.lines().nth(i).unwrap_or(""), b.lines().nth(i).unwrap_or("")),
        None => format!("dumps have {} and {} records", a.lines().count(), b.lines().count()),
    }
}

async fn sync_to(client: &NodeClient, height: u64) -> Result<()> {
    let deadline = Instant::now() + SYNC_TIMEOUT;
    while client.height().await? < height {
        ensure!(Instant::now() < deadline, "{} did not reach height {height}", client.endpoint());
        client.sync().await?;
    }
    Ok(())
}

async fn wait_resolution(topo: &Topology, patient_id: &str, want: &Endpoint) -> Result<bool> {
    let deadline = Instant::now() + SYNC_TIMEOUT;
    for inst in &topo.plan.institutions {
        let federation = FederationClient::new(inst.main_node.listen_endpoint.clone());
        loop {
            if &federation.resolve_patient(patient_id).await? == want {
                break;
            }
            if Instant::now() > deadline {
                return Ok(false);
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }
    Ok(true)
}

pub async fn relocate_and_verify(topo: &mut Topology, patient_id: &str, to: &str) -> Result<RelocationReport> {
    let started = Instant::now();
    let patient = topo.plan.patient(patient_id)?.clone();
    let from = patient.home.clone();
    let target = topo.plan.relocation_target(patient_id, to)?;
    let dest = topo.plan.institution(to)?.clone();
    let seat = patient.leader().clone();
    let seat_name = seat.node_id.to_string();
    let old = NodeClient::new(seat.listen_endpoint.clone());
    let before = trajectories(topo, patient_id).await?;

    let mut connectors = Vec::new();
    for inst in &topo.plan.institutions {
        connectors.push(topo.connector(&inst.name).await?);
    }
    let reader = Reader::start(connectors, patient_id.to_string());

    // Deploy and sync; the old node keeps serving meanwhile.
    let staging = format!("{}.incoming", seat_name);
    let new_endpoint = topo
        .launch(&ServiceSpec {
            name: staging.clone(),
            config: ServiceConfig::Node(Box::new(target.clone())),
        })
        .await?;
    let new = NodeClient::new(new_endpoint.clone());
    let height = old.height().await?;
    sync_to(&new, height).await?;
    let old_dump = old.dump().await?;
    let new_dump = new.dump().await?;
    if old_dump != new_dump {
        let probe = reader.finish().await;
        topo.stop(&staging).await?;
        bail!(
            "synced chain differs from the original ({} reads observed); {}",
            probe.attempted,
            first_difference(&old_dump, &new_dump)
        );
    }

    FederationClient::new(dest.main_node.listen_endpoint.clone())
        .relocate_patient(patient_id, &new_endpoint, &dest.credential)
        .await
        .context("committing RELOCATE")?;
    let resolution_updated = wait_resolution(topo, patient_id, &new_endpoint).await?;

    // Catch writes that landed before the switch, then retire the old seat.
    sync_to(&new, old.height().await?).await?;
    let dumps_identical = old.dump().await? == new.dump().await?;
    topo.stop(&seat_name).await?;
    match std::fs::remove_dir_all(&seat.data_dir) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(e).with_context(|| format!("removing {}", seat.data_dir.display())),
    }
    new.promote(&Promotion::new(patient_id, &seat.node_key))
        .await
        .context("promoting the new node")?;
    topo.rename(&staging, &seat_name)?;
    {
        let plan = topo.plan.patient_mut(patient_id)?;
        plan.home = to.to_string();
        let mut leader = target;
        leader.is_leader = true;
        leader.listen_endpoint = new_endpoint.clone();
        plan.nodes[0] = leader;
    }

    let after = trajectories(topo, patient_id).await?;
    let reads = reader.finish().await;
    Ok(RelocationReport {
        patient_id: patient_id.to_string(),
        from,
        to: to.to_string(),
        old_endpoint: seat.listen_endpoint,
        new_endpoint,
        height,
        dump_bytes: new_dump.len(),
        dumps_identical,
        resolution_updated,
        trajectory_unchanged: after.iter().all(|t| t == &before[0]) && before.iter().all(|t| t == &before[0]),
        reads,
        seconds: started.elapsed().as_secs_f64(),
    })
}
