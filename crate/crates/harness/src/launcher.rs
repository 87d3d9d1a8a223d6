//! Starting and stopping services, either inside this process (tests,
//! ephemeral topologies) or as `pht serve` child processes.

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use pht_core::gateway::{self, GatewayClient, GatewayHandle};
use pht_core::net::Endpoint;
use pht_core::node::{spawn_node, NodeClient, NodeHandle};
use pht_core::resources::{spawn_store, ResourcesClient, StoreHandle};
use serde::{Deserialize, Serialize};

use crate::plan::{ServiceConfig, ServiceSpec};

const READY_TIMEOUT: Duration = Duration::from_secs(20);
const STOP_GRACE: Duration = Duration::from_secs(5);

#[derive(Clone, Debug)]
pub enum Launcher {
    InProcess,
    /// Children run `<exe> serve ...`; configs and logs go under `state_dir`.
    Processes { exe: PathBuf, state_dir: PathBuf },
}

pub enum Running {
    Node(NodeHandle),
    Store(StoreHandle),
    Gateway(GatewayHandle),
    Child(ChildRecord),
}

/// What the state file keeps about a child service.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChildRecord {
    pub name: String,
    pub pid: u32,
    pub endpoint: Endpoint,
    pub log: PathBuf,
}

pub struct Service {
    pub name: String,
    pub endpoint: Endpoint,
    pub running: Running,
}

impl Service {
    pub fn child(&self) -> Option<&ChildRecord> {
        match &self.running {
            Running::Child(c) => Some(c),
            _ => None,
        }
    }

    pub async fn stop(self) {
        match self.running {
            Running::Node(h) => h.shutdown().await,
            Running::Store(h) => h.shutdown().await,
            Running::Gateway(h) => h.shutdown().await,
            Running::Child(c) => terminate(c.pid).await,
        }
    }
}

/// Exists and is not a zombie. Children of an exited `pht up` are
/// reparented and may stay unreaped after they exit.
fn alive(pid: u32) -> bool {
    // Signal 0 probes for existence without delivering anything.
    if unsafe { libc::kill(pid as libc::pid_t, 0) } != 0 {
        return false;
    }
    let stat = fs::read_to_string(format!("/proc/{pid}/stat")).unwrap_or_default();
    let state = stat.rsplit_once(')').and_then(|(_, rest)| rest.trim_start().chars().next());
    state != Some('Z')
}

fn reap(pid: u32) {
    let mut status = 0;
    unsafe {
        libc::waitpid(pid as libc::pid_t, &mut status, libc::WNOHANG);
    }
}

/// SIGTERM, then SIGKILL after a grace period.
pub async fn terminate(pid: u32) {
    unsafe {
        libc::kill(pid as libc::pid_t, libc::SIGTERM);
    }
    let deadline = Instant::now() + STOP_GRACE;
    while Instant::now() < deadline {
        reap(pid);
        if !alive(pid) {
            return;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    unsafe {
        libc::kill(pid as libc::pid_t, libc::SIGKILL);
    }
    reap(pid);
}

fn log_tail(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap_or_default();
    let lines: Vec<&str> = text.lines().collect();
    lines[lines.len().saturating_sub(15)..].join("\n")
}

impl Launcher {
    pub async fn launch(&self, spec: &ServiceSpec) -> Result<Service> {
        let (endpoint, running) = match self {
            Launcher::InProcess => launch_in_process(&spec.config).await?,
            Launcher::Processes { exe, state_dir } => {
                let record = launch_child(exe, state_dir, spec).await?;
                (record.endpoint.clone(), Running::Child(record))
            }
        };
        wait_healthy(&spec.config, &endpoint)
            .await
            .with_context(|| format!("{} at {endpoint} failed its health check", spec.name))?;
        Ok(Service {
            name: spec.name.clone(),
            endpoint,
            running,
        })
    }
}

async fn launch_in_process(config: &ServiceConfig) -> Result<(Endpoint, Running)> {
    Ok(match config {
        ServiceConfig::Node(c) => {
            let h = spawn_node((**c).clone()).await?;
            (h.endpoint().clone(), Running::Node(h))
        }
        ServiceConfig::Store(c) => {
            let h = spawn_store(c.clone()).await?;
            (h.endpoint().clone(), Running::Store(h))
        }
        ServiceConfig::Gateway(c) => {
            let h = gateway::serve((**c).clone()).await?;
            (h.endpoint().clone(), Running::Gateway(h))
        }
    })
}

async fn launch_child(exe: &Path, state_dir: &Path, spec: &ServiceSpec) -> Result<ChildRecord> {
    let dir = state_dir.join("services");
    let logs = state_dir.join("logs");
    fs::create_dir_all(&dir)?;
    fs::create_dir_all(&logs)?;
    let config_path = dir.join(format!("{}.json", spec.name));
    let ready = dir.join(format!("{}.ready", spec.name));
    let log = logs.join(format!("{}.log", spec.name));
    let _ = fs::remove_file(&ready);
    let body = match &spec.config {
        ServiceConfig::Node(c) => serde_json::to_vec_pretty(c)?,
        ServiceConfig::Store(c) => serde_json::to_vec_pretty(c)?,
        ServiceConfig::Gateway(c) => serde_json::to_vec_pretty(c)?,
    };
    fs::write(&config_path, body)?;
    let out = File::create(&log)?;

    let mut cmd = Command::new(exe);
    cmd.arg("serve")
        .arg(spec.config.kind())
        .arg("--config")
        .arg(&config_path)
        .arg("--ready-file")
        .arg(&ready)
        .stdin(Stdio::null())
        .stdout(out.try_clone()?)
        .stderr(out);
    // Own process group: outlives `pht up` and ignores the terminal's ^C.
    std::os::unix::process::CommandExt::process_group(&mut cmd, 0);
    let mut child = cmd.spawn().with_context(|| format!("spawning {}", exe.display()))?;
    let pid = child.id();

    let deadline = Instant::now() + READY_TIMEOUT;
    loop {
        if let Ok(text) = fs::read_to_string(&ready) {
            if let Ok(endpoint) = Endpoint::parse(text.trim()) {
                return Ok(ChildRecord {
                    name: spec.name.clone(),
                    pid,
                    endpoint,
                    log,
                });
            }
        }
        if let Some(status) = child.try_wait()? {
            bail!("{} exited with {status} before becoming ready:\n{}", spec.name, log_tail(&log));
        }
        if Instant::now() > deadline {
            terminate(pid).await;
            bail!("{} not ready after {READY_TIMEOUT:?}:\n{}", spec.name, log_tail(&log));
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

async fn wait_healthy(config: &ServiceConfig, endpoint: &Endpoint) -> Result<()> {
    let deadline = Instant::now() + READY_TIMEOUT;
    loop {
        let probe = match config {
            ServiceConfig::Node(_) => NodeClient::new(endpoint.clone()).health().await.map(drop).map_err(|e| e.to_string()),
            ServiceConfig::Store(_) => ResourcesClient::new(endpoint.clone(), "")
                .health()
                .await
                .map_err(|e| e.to_string()),
            ServiceConfig::Gateway(_) => GatewayClient::new(endpoint.clone(), "")
                .health()
                .await
                .map(drop)
                .map_err(|e| e.to_string()),
        };
        match probe {
            Ok(()) => return Ok(()),
            Err(e) if Instant::now() > deadline => return Err(anyhow!(e)),
            Err(_) => tokio::time::sleep(Duration::from_millis(50)).await,
        }
    }
}

/// Whether a record from the state file still names a live process.
pub fn is_running(record: &ChildRecord) -> bool {
    alive(record.pid)
}
