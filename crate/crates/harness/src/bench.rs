//! The five-operation latency benchmark, timed at the doctor-side client.

use std::fmt;
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use pht_core::connector::Connector;
use pht_core::ledger::TxKind;
use pht_core::resources::{fetch_ref, ResourcesClient};
use rand::{RngCore, SeedableRng};
use serde::Serialize;

use crate::deploy::Topology;

pub const OPERATIONS: [&str; 5] = [
    "Locate patient's blockchain",
    "Save evidence's resource",
    "Add evidence to patient's blockchain",
    "Retrieve evidence's resource",
    "Recover evidences from patient's blockchain",
];

/// Seconds reported for each operation on the reference deployment.
pub const REFERENCE_SECONDS: [f64; 5] = [0.079, 0.21, 4.784, 0.209, 0.128];

pub const LOCATE: usize = 0;
pub const SAVE: usize = 1;
pub const ADD: usize = 2;
pub const RETRIEVE: usize = 3;
pub const RECOVER: usize = 4;

const PAYLOAD_HINT: &str = "application/octet-stream";

#[derive(Clone, Copy, Debug, Serialize)]
pub struct BenchOptions {
    pub runs: usize,
    pub validators: usize,
    pub payload_bytes: usize,
    /// Untimed rounds before measuring.
    pub warmup: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            runs: 20,
            validators: 1,
            payload_bytes: 1024,
            warmup: 2,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OperationRow {
    pub name: &'static str,
    pub runs: usize,
    pub mean_seconds: f64,
    pub min: f64,
    pub max: f64,
    pub reference_seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TopologyEcho {
    pub institutions: Vec<String>,
    pub patient_id: String,
    pub home_institution: String,
    pub client_institution: String,
    pub validators: usize,
    pub payload_bytes: usize,
    pub warmup: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchmarkReport {
    pub rows: Vec<OperationRow>,
    pub topology: TopologyEcho,
    pub environment: String,
}

impl BenchmarkReport {
    pub fn mean(&self, op: usize) -> f64 {
        self.rows[op].mean_seconds
    }

    /// Add dominates both consensus-free reads of the chain.
    pub fn add_dominates(&self) -> bool {
        self.mean(ADD) > self.mean(LOCATE) && self.mean(ADD) > self.mean(RECOVER)
    }
}

impl fmt::Display for BenchmarkReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = &self.topology;
        writeln!(
            f,
            "patient {} at {} with {} validator(s); client at {}; payload {} B; institutions {}",
            t.patient_id,
            t.home_institution,
            t.validators,
            t.client_institution,
            t.payload_bytes,
            t.institutions.join(", ")
        )?;
        writeln!(f, "environment: {}", self.environment)?;
        writeln!(
            f,
            "{:<46} {:>4} {:>11} {:>11} {:>11} {:>11}",
            "operation", "runs", "mean (s)", "min (s)", "max (s)", "reference (s)"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<46} {:>4} {:>11.6} {:>11.6} {:>11.6} {:>11.3}",
                r.name, r.runs, r.mean_seconds, r.min, r.max, r.reference_seconds
            )?;
        }
        let verdict = if self.add_dominates() { "holds" } else { "does NOT hold" };
        write!(f, "mean(Add) > mean(Locate) and > mean(Recover): {verdict}")
    }
}

/// Local hardware and OS, since absolute numbers depend on them.
pub fn environment_note() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let cores = std::thread::available_parallelism().map_or(0, |n| n.get());
    let os = std::fs::read_to_string("/etc/os-release")
        .ok()
        .and_then(|s| {
            s.lines()
                .find_map(|l| l.strip_prefix("PRETTY_NAME="))
                .map(|v| v.trim_matches('"').to_string())
        })
        .unwrap_or_else(|| std::env::consts::OS.to_string());
    let kernel = std::fs::read_to_string("/proc/sys/kernel/osrelease").unwrap_or_default();
    format!("{cpu}, {cores} cores, {os}, kernel {}, all services on loopback", kernel.trim())
}

/// One patient chain provisioned for benchmarking and the clients that time
/// operations against it.
pub struct Bench {
    pub patient_id: String,
    pub home: String,
    pub client_institution: String,
    pub options: BenchOptions,
    connector: Connector,
    store: ResourcesClient,
    payload: Vec<u8>,
}

impl Bench {
    /// Plans, starts and registers `bench-v<N>` at the first institution
    /// unless it is already running. The client is the last institution.
    pub async fn prepare(topo: &mut Topology, options: BenchOptions) -> Result<Bench> {
        ensure!(options.validators >= 1, "at least one validator is needed");
        let home = topo.plan.institutions[0].name.clone();
        let client_institution = topo.plan.institutions.last().expect("validated").name.clone();
        let patient_id = format!("bench-v{}", options.validators);
        if topo.plan.patient(&patient_id).is_err() {
            topo.plan.add_patient(&patient_id, &home, options.validators)?;
        }
        let nodes: Vec<_> = topo
            .plan
            .services()
            .into_iter()
            .filter(|s| topo.plan.patient(&patient_id).is_ok_and(|p| p.nodes.iter().any(|n| n.node_id.as_str() == s.name)))
            .collect();
        for spec in nodes {
            if !topo.is_running(&spec.name) {
                topo.launch(&spec).await?;
            }
        }
        topo.register(&patient_id).await?;

        let mut rng = rand::rngs::StdRng::seed_from_u64(options.payload_bytes as u64);
        let mut payload = vec![0u8; options.payload_bytes];
        rng.fill_bytes(&mut payload);
        Ok(Bench {
            connector: topo.connector(&client_institution).await?,
            store: topo.store_client(&client_institution)?,
            patient_id,
            home,
            client_institution,
            options,
            payload,
        })
    }

    /// Times the five operations once, in table order.
    pub async fn run_once(&self) -> Result<[Duration; 5]> {
        let pid = Some(self.patient_id.as_str());
        let mut out = [Duration::ZERO; 5];

        let t = Instant::now();
        self.connector.locate(pid).await.context("locate")?;
        out[LOCATE] = t.elapsed();

        let t = Instant::now();
        let reference = self.store.store(self.payload.clone(), PAYLOAD_HINT).await.context("save")?;
        out[SAVE] = t.elapsed();

        let t = Instant::now();
        self.connector
            .add_reference(pid, &reference, TxKind::Add, None)
            .await
            .context("add")?;
        out[ADD] = t.elapsed();

        let t = Instant::now();
        let (bytes, _) = fetch_ref(self.connector.http(), &reference).await.context("retrieve")?;
        out[RETRIEVE] = t.elapsed();
        ensure!(bytes == self.payload, "retrieved payload differs");

        let t = Instant::now();
        let trajectory = self.connector.get_trajectory(pid).await.context("recover")?;
        out[RECOVER] = t.elapsed();
        ensure!(
            trajectory.last().is_some_and(|e| e.reference == reference),
            "recovered trajectory lacks the new entry"
        );
        Ok(out)
    }

    pub async fn warm_up(&self) -> Result<()> {
        for _ in 0..self.options.warmup {
            self.run_once().await?;
        }
        Ok(())
    }

    pub fn report(&self, topo: &Topology, samples: &[[Duration; 5]]) -> BenchmarkReport {
        let rows = OPERATIONS
            .iter()
            .enumerate()
            .map(|(op, name)| {
                let secs: Vec<f64> = samples.iter().map(|s| s[op].as_secs_f64()).collect();
                OperationRow {
                    name,
                    runs: secs.len(),
                    mean_seconds: secs.iter().sum::<f64>() / secs.len().max(1) as f64,
                    min: secs.iter().copied().fold(f64::INFINITY, f64::min),
                    max: secs.iter().copied().fold(0.0, f64::max),
                    reference_seconds: REFERENCE_SECONDS[op],
                }
            })
            .collect();
        BenchmarkReport {
            rows,
            topology: TopologyEcho {
                institutions: topo.plan.institutions.iter().map(|i| i.name.clone()).collect(),
                patient_id: self.patient_id.clone(),
                home_institution: self.home.clone(),
                client_institution: self.client_institution.clone(),
                validators: self.options.validators,
                payload_bytes: self.options.payload_bytes,
                warmup: self.options.warmup,
            },
            environment: environment_note(),
        }
    }
}

/// Warm-up, then `runs` sequential timed rounds.
pub async fn run_benchmark(topo: &mut Topology, options: BenchOptions) -> Result<BenchmarkReport> {
    ensure!(options.runs >= 1, "at least one run is needed");
    let bench = Bench::prepare(topo, options).await?;
    bench.warm_up().await?;
    let mut samples = Vec::with_capacity(options.runs);
    for run in 0..options.runs {
        samples.push(bench.run_once().await.with_context(|| format!("run {}", run + 1))?);
    }
    Ok(bench.report(topo, &samples))
}

/// Two chain sizes measured in alternating rounds, so drift on the host
/// affects both alike.
pub async fn run_interleaved(
    topo: &mut Topology,
    a: BenchOptions,
    b: BenchOptions,
) -> Result<(BenchmarkReport, BenchmarkReport)> {
    ensure!(a.runs == b.runs && a.runs >= 1, "both sides need the same positive run count");
    let first = Bench::prepare(topo, a).await?;
    let second = Bench::prepare(topo, b).await?;
    first.warm_up().await?;
    second.warm_up().await?;
    let (mut sa, mut sb) = (Vec::new(), Vec::new());
    for run in 0..a.runs {
        sa.push(first.run_once().await.with_context(|| format!("run {} ({} validators)", run + 1, a.validators))?);
        sb.push(second.run_once().await.with_context(|| format!("run {} ({} validators)", run + 1, b.validators))?);
    }
    Ok((first.report(topo, &sa), second.report(topo, &sb)))
}
