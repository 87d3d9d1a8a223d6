use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tokio::task::JoinHandle;

use crate::federation::RoutingEntry;
use crate::ledger::{Block, ChainKind, CommitSignature, Transaction};
use crate::net::{bind, decode_component, Endpoint, ServerHandle};

use super::{BlockRange, Health, HeightReply, Node, NodeConfig, NodeError, Promotion, Proposal, SyncReport};

type Shared = State<Arc<Node>>;

#[derive(Deserialize)]
struct RangeQuery {
    from: u64,
    to: u64,
}

async fn submit(State(node): Shared, Json(tx): Json<Transaction>) -> Result<Json<Block>, NodeError> {
    Ok(Json(node.submit_transaction(tx).await?))
}

async fn blocks(State(node): Shared, Query(q): Query<RangeQuery>) -> Result<Json<BlockRange>, NodeError> {
    Ok(Json(node.read_blocks(q.from, q.to)?))
}

async fn height(State(node): Shared) -> Json<HeightReply> {
    Json(HeightReply { height: node.height() })
}

async fn health(State(node): Shared) -> Json<Health> {
    Json(node.health())
}

async fn propose(State(node): Shared, Json(p): Json<Proposal>) -> Result<Json<CommitSignature>, NodeError> {
    Ok(Json(node.handle_propose(p).await?))
}

async fn commit(State(node): Shared, Json(block): Json<Block>) -> Result<Json<HeightReply>, NodeError> {
    let height = node.handle_commit(block).await?;
    Ok(Json(HeightReply { height }))
}

async fn sync(State(node): Shared) -> Json<SyncReport> {
    Json(node.sync_from_peers().await)
}

async fn promote(State(node): Shared, Json(p): Json<Promotion>) -> Result<Json<Health>, NodeError> {
    node.promote(&p).await?;
    Ok(Json(node.health()))
}

async fn resolve(State(node): Shared, Path(patient_id): Path<String>) -> Result<Json<RoutingEntry>, NodeError> {
    Ok(Json(node.resolve(&decode_component(&patient_id))?))
}

async fn route(State(node): Shared, Json(tx): Json<Transaction>) -> Result<Json<Block>, NodeError> {
    if !tx.kind.is_routing() {
        return Err(NodeError::Invalid(format!("{} is not a routing transaction", tx.kind)));
    }
    Ok(Json(node.submit_transaction(tx).await?))
}

pub fn router(node: Arc<Node>) -> Router {
    let mut router = Router::new()
        .route("/tx", post(submit))
        .route("/blocks", get(blocks))
        .route("/height", get(height))
        .route("/health", get(health))
        .route("/propose", post(propose))
        .route("/commit", post(commit))
        .route("/sync", post(sync))
        .route("/promote", post(promote));
    if node.config().chain_kind == ChainKind::Main {
        router = router
            .route("/route", post(route))
            .route("/route/{patient_id}", get(resolve));
    }
    router.with_state(node)
}

/// A node serving the wire protocol.
pub struct NodeHandle {
    node: Arc<Node>,
    server: ServerHandle,
    background: Option<JoinHandle<()>>,
}

impl NodeHandle {
    pub fn endpoint(&self) -> &Endpoint {
        self.server.endpoint()
    }

    pub fn node(&self) -> &Arc<Node> {
        &self.node
    }

    pub async fn shutdown(mut self) {
        if let Some(task) = self.background.take() {
            task.abort();
        }
        self.server.stop().await;
    }
}

/// Loads and validates the chain in `config.data_dir`, binds the listen
/// endpoint and starts serving. Followers catch up from their peers first.
pub async fn spawn_node(config: NodeConfig) -> Result<NodeHandle, NodeError> {
    config.validate()?;
    let (listener, endpoint) = bind(&config.listen_endpoint)
        .await
        .map_err(|e| NodeError::Bind(format!("{}: {e}", config.listen_endpoint)))?;
    let interval = config.sync_interval_ms;
    let is_leader = config.is_leader;
    let node = Arc::new(Node::open(config, endpoint.clone())?);
    let server = ServerHandle::start(listener, endpoint, router(Arc::clone(&node)));

    let background = (!is_leader).then(|| {
        let node = Arc::clone(&node);
        tokio::spawn(async move {
            node.sync_from_peers().await;
            if interval == 0 {
                return;
            }
            let mut tick = tokio::time::interval(Duration::from_millis(interval));
            loop {
                tick.tick().await;
                node.sync_from_peers().await;
            }
        })
    });
    Ok(NodeHandle {
        node,
        server,
        background,
    })
}
