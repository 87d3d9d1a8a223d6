//! The two-institution scenario: a doctor at CN records evidence on
//! Paula's trajectory and a doctor at ES reads it back, with no action
//! from Paula. Paula is planned at ES; a relocated chain works the same.

use std::fmt;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use pht_core::connector::TrajectoryEntry;
use pht_core::ledger::TxKind;
use serde::Serialize;

use crate::deploy::Topology;

pub const PATIENT: &str = "paula";
pub const HOME: &str = "ES";
pub const VISITED: &str = "CN";

const GLUCOSE_HINT: &str = "application/json";
const FOLLOW_UP_HINT: &str = "text/plain; charset=utf-8";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// CN's Resources API is stopped before ES reads the evidence.
    CnStoreDown,
    /// Paula is never put on the main chain.
    Unregistered,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Passed { detail: String },
    Failed { cause: String },
    Skipped,
}

#[derive(Clone, Debug, Serialize)]
pub struct StepReport {
    pub step: usize,
    pub title: &'static str,
    #[serde(flatten)]
    pub outcome: Outcome,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioReport {
    pub fault: Option<Fault>,
    pub steps: Vec<StepReport>,
    pub seconds: f64,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.steps.iter().all(|s| matches!(s.outcome, Outcome::Passed { .. }))
    }

    pub fn step(&self, n: usize) -> &StepReport {
        &self.steps[n - 1]
    }
}

impl fmt::Display for ScenarioReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.steps {
            let (tag, text) = match &s.outcome {
                Outcome::Passed { detail } => ("PASS", detail.as_str()),
                Outcome::Failed { cause } => ("FAIL", cause.as_str()),
                Outcome::Skipped => ("SKIP", "an earlier step failed"),
            };
            writeln!(f, "step {} {tag} {:<48} {:>7.3}s  {text}", s.step, s.title, s.seconds)?;
        }
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "scenario {verdict} in {:.2}s", self.seconds)
    }
}

const TITLES: [&str; 4] = [
    "CN locates Paula's chain via its main-chain node",
    "CN stores a glucose measurement and records it",
    "ES reads the trajectory and fetches the evidence",
    "ES adds a follow-up; both institutions agree",
];

fn glucose_document() -> Vec<u8> {
    let doc = serde_json::json!({
        "type": "glucose-measurement",
        "patient": PATIENT,
        "institution": VISITED,
        "value_mg_dl": 182,
        "fasting": false,
        "taken_at_ms": pht_core::ledger::Timestamp::now().millis(),
    });
    serde_json::to_vec_pretty(&doc).expect("static document")
}

/// Steps share what earlier ones produced.
#[derive(Default)]
struct Carry {
    baseline: usize,
    glucose: Vec<u8>,
    glucose_tx: Option<pht_core::ledger::Digest>,
}

/// Runs the four steps in order; a failed step skips the rest.
pub async fn run_paula_scenario(topo: &mut Topology, fault: Option<Fault>) -> Result<ScenarioReport> {
    topo.plan.patient(PATIENT).context("the topology must plan patient paula")?;
    topo.plan.institution(HOME)?;
    topo.plan.institution(VISITED)?;

    let started = Instant::now();
    let mut carry = Carry::default();
    let mut steps = Vec::new();
    let mut failed = false;
    for (i, title) in TITLES.iter().enumerate() {
        let step = i + 1;
        if failed {
            steps.push(StepReport {
                step,
                title,
                outcome: Outcome::Skipped,
                seconds: 0.0,
            });
            continue;
        }
        if step == 3 && fault == Some(Fault::CnStoreDown) {
            topo.stop(&Topology::store_name(VISITED)).await?;
        }
        let t = Instant::now();
        let result = match step {
            1 => step_locate(topo).await,
            2 => step_record(topo, &mut carry).await,
            3 => step_read(topo, &carry).await,
            _ => step_follow_up(topo, &carry).await,
        };
        let outcome = match result {
            Ok(detail) => Outcome::Passed { detail },
            Err(e) => {
                failed = true;
                Outcome::Failed { cause: format!("{e:#}") }
            }
        };
        steps.push(StepReport {
            step,
            title,
            outcome,
            seconds: t.elapsed().as_secs_f64(),
        });
    }
    if fault == Some(Fault::CnStoreDown) {
        restore_store(topo).await?;
    }
    Ok(ScenarioReport {
        fault,
        steps,
        seconds: started.elapsed().as_secs_f64(),
    })
}

async fn restore_store(topo: &mut Topology) -> Result<()> {
    let name = Topology::store_name(VISITED);
    if topo.is_running(&name) {
        return Ok(());
    }
    let spec = topo
        .plan
        .services()
        .into_iter()
        .find(|s| s.name == name)
        .expect("every institution plans a store");
    topo.launch(&spec).await.map(drop)
}

async fn step_locate(topo: &Topology) -> Result<String> {
    let cn = topo.connector(VISITED).await?;
    let endpoint = cn.locate(Some(PATIENT)).await?;
    let planned = &topo.plan.patient(PATIENT)?.leader().listen_endpoint;
    ensure!(&endpoint == planned, "resolved {endpoint}, but the chain leader serves {planned}");
    Ok(format!("resolved to {endpoint}"))
}

async fn step_record(topo: &Topology, carry: &mut Carry) -> Result<String> {
    let cn = topo.connector(VISITED).await?;
    carry.baseline = cn.get_trajectory(Some(PATIENT)).await?.len();
    carry.glucose = glucose_document();
    let reference = topo
        .store_client(VISITED)?
        .store(carry.glucose.clone(), GLUCOSE_HINT)
        .await
        .context("saving in CN's Resources API")?;
    let block = cn
        .add_reference(Some(PATIENT), &reference, TxKind::Add, None)
        .await
        .context("adding the reference")?;
    carry.glucose_tx = Some(block.tx.tx_id);
    Ok(format!("committed at height {} ({} bytes)", block.height, carry.glucose.len()))
}

async fn step_read(topo: &Topology, carry: &Carry) -> Result<String> {
    let es = topo.connector(HOME).await?;
    let trajectory = es.get_trajectory(Some(PATIENT)).await?;
    let want = carry.glucose_tx.expect("step 2 passed");
    let entry = trajectory
        .iter()
        .find(|e| e.tx_id == want)
        .with_context(|| format!("ES does not see tx {want}"))?;
    let (bytes, hint) = es.fetch_evidence(entry).await.context("fetching from CN's Resources API")?;
    ensure!(bytes == carry.glucose, "fetched payload differs from the stored one");
    ensure!(hint == GLUCOSE_HINT, "media hint {hint:?}");
    Ok(format!("{} entries, evidence byte-identical", trajectory.len()))
}

async fn step_follow_up(topo: &Topology, carry: &Carry) -> Result<String> {
    let es = topo.connector(HOME).await?;
    let note = format!("Follow-up for {PATIENT}: review glucose measurement from {VISITED}.\n").into_bytes();
    let reference = topo.store_client(HOME)?.store(note, FOLLOW_UP_HINT).await?;
    es.add_reference(Some(PATIENT), &reference, TxKind::Add, None).await?;

    let from_es = es.get_trajectory(Some(PATIENT)).await?;
    let from_cn = topo.connector(VISITED).await?.get_trajectory(Some(PATIENT)).await?;
    let added = |t: &[TrajectoryEntry]| t.len().saturating_sub(carry.baseline);
    ensure!(added(&from_es) == 2, "ES sees {} new entries", added(&from_es));
    ensure!(from_es == from_cn, "ES and CN trajectories differ");
    let new = &from_es[carry.baseline..];
    ensure!(new[0].tx_id == carry.glucose_tx.expect("step 2 passed"), "glucose entry is not first");
    ensure!(new[0].creator.as_str() == VISITED && new[1].creator.as_str() == HOME, "unexpected creators");

    let mut via = vec!["connectors"];
    for inst in [HOME, VISITED] {
        if !topo.is_running(&Topology::gateway_name(inst)) {
            continue;
        }
        let t = topo.gateway_client(inst)?.trajectory(PATIENT).await?;
        if t != from_es {
            bail!("{inst}'s gateway returns a different trajectory");
        }
        via.push(if inst == HOME { "ES gateway" } else { "CN gateway" });
    }
    Ok(format!("{} entries identical via {}", from_es.len(), via.join(", ")))
}

/// Upper bound on a whole run, for callers that want a deadline.
pub const SCENARIO_BUDGET: Duration = Duration::from_secs(60);
