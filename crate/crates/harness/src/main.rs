use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use pht_core::gateway::{self, GatewayConfig};
use pht_core::node::{spawn_node, NodeConfig};
use pht_core::resources::{spawn_store, StoreConfig};
use pht_harness::bench::{run_benchmark, BenchOptions};
use pht_harness::deploy::{spec_digest, BringUp, StateFile, Topology};
use pht_harness::launcher::{terminate, Launcher};
use pht_harness::plan::Plan;
use pht_harness::relocate::relocate_and_verify;
use pht_harness::scenario::{run_paula_scenario, Fault};
use pht_harness::topology::TopologySpec;
use serde::Serialize;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "pht", about = "Run and exercise a federation of simulated institutions")]
struct Cli {
    /// Where `up` records running services.
    #[arg(long, global = true, default_value = ".pht")]
    state_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start every service of a topology file as background processes.
    Up { topology: PathBuf },
    /// Stop the services started by `up`.
    Down,
    /// Run the two-institution scenario.
    Scenario {
        #[arg(value_enum)]
        name: ScenarioName,
        #[arg(long, value_enum)]
        fault: Option<Fault>,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time the five evidence operations.
    Bench {
        #[arg(long, default_value_t = 20)]
        runs: usize,
        /// Validators of the benchmark patient's chain.
        #[arg(long, default_value_t = 1)]
        validators: usize,
        #[arg(long, default_value_t = 1024)]
        payload_bytes: usize,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Move a patient's chain to another institution and verify it.
    Relocate {
        patient: String,
        institution: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    #[command(hide = true)]
    Serve {
        #[arg(value_enum)]
        kind: ServeKind,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ready_file: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioName {
    Paula,
}

#[derive(Clone, Copy, ValueEnum)]
enum ServeKind {
    Node,
    Resources,
    Gateway,
}

fn init_tracing(default: &str) {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

/// The topology `up` left running, or else a throwaway in-process one
/// (ES, CN and paula homed at ES) under a temporary directory.
struct Session {
    topo: Topology,
    attached: Option<StateFile>,
    _scratch: Option<tempfile::TempDir>,
}

impl Session {
    async fn open(state_dir: &Path, options: BringUp) -> Result<Session> {
        if options.register {
            if let Some(state) = StateFile::load(state_dir)?.filter(StateFile::is_live) {
                let topo = Topology::attach(state.clone(), std::env::current_exe()?, state_dir.to_path_buf())?;
                return Ok(Session {
                    topo,
                    attached: Some(state),
                    _scratch: None,
                });
            }
        }
        let scratch = tempfile::tempdir()?;
        let plan = Plan::derive(&TopologySpec::paula(scratch.path()))?;
        let topo = Topology::bring_up(plan, Launcher::InProcess, options).await?;
        Ok(Session {
            topo,
            attached: None,
            _scratch: Some(scratch),
        })
    }

    /// Records changes to a running topology; stops a throwaway one.
    async fn close(mut self, state_dir: &Path) -> Result<()> {
        match self.attached {
            Some(state) => self.topo.state(state.spec_digest).save(state_dir),
            None => {
                self.topo.teardown().await;
                Ok(())
            }
        }
    }
}

async fn up(state_dir: &Path, topology: &Path) -> Result<()> {
    let spec = TopologySpec::load(topology)?;
    let digest = spec_digest(&spec);
    let previous = StateFile::load(state_dir)?;
    if previous.as_ref().is_some_and(StateFile::is_live) {
        bail!("a topology is already running (see {}); run `pht down` first", StateFile::path(state_dir).display());
    }
    // Reusing the last plan of the same file keeps relocations and benchmark chains.
    let plan = match previous {
        Some(state) if state.spec_digest == digest => state.plan,
        _ => Plan::derive(&spec)?,
    };
    let launcher = Launcher::Processes {
        exe: std::env::current_exe()?,
        state_dir: state_dir.to_path_buf(),
    };
    let topo = Topology::bring_up(plan, launcher, BringUp::default()).await?;
    topo.state(digest).save(state_dir)?;
    for name in topo.names() {
        println!("{name:<24} {}", topo.endpoint(name)?);
    }
    println!("topology up; state in {}", StateFile::path(state_dir).display());
    Ok(())
}

async fn down(state_dir: &Path) -> Result<()> {
    let Some(mut state) = StateFile::load(state_dir)? else {
        println!("nothing is running");
        return Ok(());
    };
    for record in state.services.iter().rev() {
        terminate(record.pid).await;
        println!("stopped {:<24} {}", record.name, record.endpoint);
    }
    let endpoints: Vec<_> = state.services.drain(..).map(|r| r.endpoint).collect();
    state.save(state_dir)?;
    let still_bound: Vec<_> = endpoints
        .iter()
        .filter(|e| std::net::TcpListener::bind(e.as_str()).is_err())
        .collect();
    if !still_bound.is_empty() {
        bail!("ports still in use after teardown: {still_bound:?}");
    }
    Ok(())
}

async fn serve(kind: ServeKind, config: &Path, ready: &Path) -> Result<()> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    enum Handle {
        Node(pht_core::node::NodeHandle),
        Store(pht_core::resources::StoreHandle),
        Gateway(gateway::GatewayHandle),
    }
    let handle = match kind {
        ServeKind::Node => Handle::Node(spawn_node(serde_json::from_str::<NodeConfig>(&text)?).await?),
        ServeKind::Resources => Handle::Store(spawn_store(serde_json::from_str::<StoreConfig>(&text)?).await?),
        ServeKind::Gateway => Handle::Gateway(gateway::serve(serde_json::from_str::<GatewayConfig>(&text)?).await?),
    };
    let endpoint = match &handle {
        Handle::Node(h) => h.endpoint().clone(),
        Handle::Store(h) => h.endpoint().clone(),
        Handle::Gateway(h) => h.endpoint().clone(),
    };
    let tmp = ready.with_extension("tmp");
    fs::write(&tmp, endpoint.as_str())?;
    fs::rename(&tmp, ready)?;
    tracing::info!(%endpoint, "serving");

    let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate())?;
    tokio::select! {
        _ = term.recv() => {}
        _ = tokio::signal::ctrl_c() => {}
    }
    match handle {
        Handle::Node(h) => h.shutdown().await,
        Handle::Store(h) => h.shutdown().await,
        Handle::Gateway(h) => h.shutdown().await,
    }
    let _ = fs::remove_file(ready);
    tracing::info!("stopped");
    Ok(())
}

async fn run(cli: Cli) -> Result<bool> {
    let state_dir = cli.state_dir.as_path();
    match cli.command {
        Command::Up { topology } => up(state_dir, &topology).await.map(|()| true),
        Command::Down => down(state_dir).await.map(|()| true),
        Command::Scenario {
            name: ScenarioName::Paula,
            fault,
            out,
        } => {
            let options = BringUp {
                register: fault != Some(Fault::Unregistered),
                gateways: true,
            };
            let mut session = Session::open(state_dir, options).await?;
            let report = run_paula_scenario(&mut session.topo, fault).await;
            session.close(state_dir).await?;
            let report = report?;
            println!("{report}");
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
            Ok(report.passed())
        }
        Command::Bench {
            runs,
            validators,
            payload_bytes,
            warmup,
            out,
        } => {
            let options = BenchOptions {
                runs,
                validators,
                payload_bytes,
                warmup,
            };
            let mut session = Session::open(state_dir, BringUp::default()).await?;
            let report = run_benchmark(&mut session.topo, options).await;
            session.close(state_dir).await?;
            let report = report?;
            println!("{report}");
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
            Ok(report.add_dominates())
        }
        Command::Relocate {
            patient,
            institution,
            out,
        } => {
            let mut session = Session::open(state_dir, BringUp::default()).await?;
            let report = relocate_and_verify(&mut session.topo, &patient, &institution).await;
            session.close(state_dir).await?;
            let report = report?;
            println!("{report}");
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
            Ok(report.passed())
        }
        Command::Serve {
            kind,
            config,
            ready_file,
        } => serve(kind, &config, &ready_file).await.map(|()| true),
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    init_tracing(if matches!(cli.command, Command::Serve { .. }) { "info" } else { "warn" });
    match run(cli).await {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
