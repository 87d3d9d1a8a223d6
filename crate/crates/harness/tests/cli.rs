use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

use pht_harness::deploy::{BringUp, StateFile, Topology};
use pht_harness::launcher::Launcher;
use pht_harness::plan::Plan;
use pht_harness::topology::TopologySpec;
use serde_json::Value;

fn pht(state: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pht"))
        .arg("--state-dir")
        .arg(state)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const PAULA: &str = r#"
[[institutions]]
name = "ES"
data_dir = "es"

[[institutions]]
name = "CN"
data_dir = "cn"

[[patients]]
patient_id = "paula"
home_institution = "ES"
"#;

fn port_free(endpoint: &str) -> bool {
    TcpListener::bind(endpoint).is_ok()
}

fn scenario_json(state: &Path, dir: &Path, extra: &[&str]) -> (Output, Value) {
    let path = dir.join("scenario.json");
    let mut args = vec!["scenario", "paula", "--out", path.to_str().unwrap()];
    args.extend_from_slice(extra);
    let out = pht(state, &args);
    let json = serde_json::from_slice(&std::fs::read(&path).unwrap_or_default()).unwrap_or(Value::Null);
    (out, json)
}

#[test]
fn up_scenario_down_and_up_again_over_the_same_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("state");
    let topology = dir.path().join("topology.toml");
    std::fs::write(&topology, PAULA).unwrap();

    let up = pht(&state, &["up", topology.to_str().unwrap()]);
    assert!(up.status.success(), "{}", stderr(&up));
    let recorded = StateFile::load(&state).unwrap().unwrap();
    let names: Vec<&str> = recorded.services.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(
        names,
        ["es.resources", "cn.resources", "es.main", "cn.main", "es.paula.v0", "es.gateway", "cn.gateway"]
    );
    assert!(recorded.services.iter().all(|s| s.log.exists()));

    let again = pht(&state, &["up", topology.to_str().unwrap()]);
    assert!(!again.status.success());
    assert!(stderr(&again).contains("already running"));

    let (out, report) = scenario_json(&state, dir.path(), &[]);
    assert!(out.status.success(), "{}", stdout(&out));
    assert!(report["steps"].as_array().unwrap().iter().all(|s| s["outcome"] == "passed"));

    let down = pht(&state, &["down"]);
    assert!(down.status.success(), "{}", stderr(&down));
    for s in &recorded.services {
        assert!(port_free(s.endpoint.as_str()), "{} still bound", s.name);
    }

    // The chains replay from disk: a second run sees the first run's entries.
    let up = pht(&state, &["up", topology.to_str().unwrap()]);
    assert!(up.status.success(), "{}", stderr(&up));
    let (out, _) = scenario_json(&state, dir.path(), &[]);
    assert!(out.status.success(), "{}", stdout(&out));
    assert!(stdout(&out).contains("4 entries identical"), "{}", stdout(&out));
    assert!(pht(&state, &["down"]).status.success());
    assert!(!stdout(&pht(&state, &["down"])).contains("stopped"));
}

#[test]
fn injected_faults_fail_the_expected_step() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("state");

    let (out, report) = scenario_json(&state, dir.path(), &["--fault", "cn-store-down"]);
    assert_eq!(out.status.code(), Some(1));
    let outcomes: Vec<&str> = report["steps"].as_array().unwrap().iter().map(|s| s["outcome"].as_str().unwrap()).collect();
    assert_eq!(outcomes, ["passed", "passed", "failed", "skipped"]);
    assert!(report["steps"][2]["cause"].as_str().unwrap().contains("transport"));

    let (out, report) = scenario_json(&state, dir.path(), &["--fault", "unregistered"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(report["steps"][0]["outcome"], "failed");
    assert!(report["steps"][0]["cause"].as_str().unwrap().contains("not found"));
}

#[test]
fn invalid_topologies_are_refused_before_launch() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("state");
    let cases = [
        (
            "[[institutions]]\nname = \"ES\"\nbase_port = 7300\ndata_dir = \"es\"\n\
             [[institutions]]\nname = \"CN\"\nbase_port = 7301\ndata_dir = \"cn\"\n",
            "port",
        ),
        (
            "[[institutions]]\nname = \"ES\"\ndata_dir = \"es\"\n\
             [[patients]]\npatient_id = \"paula\"\nhome_institution = \"XX\"\n",
            "unknown home institution",
        ),
    ];
    for (text, needle) in cases {
        let file = dir.path().join("bad.toml");
        std::fs::write(&file, text).unwrap();
        let out = pht(&state, &["up", file.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2));
        assert!(stderr(&out).contains(needle), "{}", stderr(&out));
        assert!(StateFile::load(&state).unwrap().is_none());
    }
}

#[tokio::test]
async fn failed_health_check_tears_down_what_started() {
    let dir = tempfile::tempdir().unwrap();
    let plan = Plan::derive(&TopologySpec::paula(dir.path())).unwrap();
    let store = plan.institutions[0].store.listen_endpoint.clone();
    let blocker = TcpListener::bind(plan.institutions[1].main_node.listen_endpoint.as_str()).unwrap();

    let err = Topology::bring_up(plan, Launcher::InProcess, BringUp::default()).await.err().unwrap();
    let message = format!("{err:#}");
    assert!(message.contains("cn.main") || message.contains("bind"), "{message}");
    assert!(message.contains("stopped"), "{message}");
    assert!(port_free(store.as_str()));
    drop(blocker);
}

#[tokio::test]
async fn bench_report_always_has_the_five_rows() {
    let dir = tempfile::tempdir().unwrap();
    let plan = Plan::derive(&TopologySpec::paula(dir.path())).unwrap();
    let mut topo = Topology::bring_up(plan, Launcher::InProcess, BringUp::default()).await.unwrap();
    let options = pht_harness::bench::BenchOptions {
        runs: 3,
        validators: 2,
        payload_bytes: 0,
        warmup: 0,
    };
    let report = pht_harness::bench::run_benchmark(&mut topo, options).await.unwrap();
    topo.teardown().await;
    let names: Vec<&str> = report.rows.iter().map(|r| r.name).collect();
    assert_eq!(names, pht_harness::bench::OPERATIONS);
    assert!(report.rows.iter().all(|r| r.runs == 3 && r.min <= r.mean_seconds && r.mean_seconds <= r.max));
    assert_eq!(report.topology.validators, 2);
    let table = report.to_string();
    assert!(table.lines().any(|l| l.starts_with("Add evidence to patient's blockchain")));
}
