mod common;

use common::MiniFederation;
use pht_core::connector::{Connector, ConnectorConfig, ConnectorMode, CurrentView, TrajectoryEntry};
use pht_core::gateway::{serve, GatewayConfig, GatewayError, GatewayHandle, ReferenceRequest};
use pht_core::ledger::{Block, TxKind};
use pht_core::net::{Endpoint, ErrorBody};
use reqwest::StatusCode;

const TOKEN: &str = "console-token";

fn config(fed: &MiniFederation, mode: ConnectorMode) -> GatewayConfig {
    let target = match mode {
        ConnectorMode::ViaMain => fed.main.endpoint().clone(),
        ConnectorMode::Direct => fed.patient_endpoint(),
    };
    GatewayConfig {
        bind_endpoint: Endpoint::loopback(0),
        connector: ConnectorConfig {
            mode,
            target_endpoint: target,
            credential: fed.es.clone(),
        },
        auth_tokens: vec![TOKEN.into()],
    }
}

async fn get(gw: &GatewayHandle, path: &str) -> reqwest::Response {
    reqwest::Client::new()
        .get(gw.endpoint().url(path))
        .bearer_auth(TOKEN)
        .send()
        .await
        .unwrap()
}

async fn post_ref(gw: &GatewayHandle, req: &ReferenceRequest) -> reqwest::Response {
    reqwest::Client::new()
        .post(gw.endpoint().url("/references"))
        .bearer_auth(TOKEN)
        .json(req)
        .send()
        .await
        .unwrap()
}

#[tokio::test]
async fn endpoints_delegate_to_the_connector() {
    let fed = MiniFederation::start(1).await;
    let gw = serve(config(&fed, ConnectorMode::ViaMain)).await.unwrap();
    let sdk = Connector::connect(config(&fed, ConnectorMode::ViaMain).connector).await.unwrap();

    let r = fed.store_client().store(b"glucose".to_vec(), "text/plain").await.unwrap();
    let resp = post_ref(
        &gw,
        &ReferenceRequest {
            patient_id: Some("paula".into()),
            reference: r.clone(),
            kind: TxKind::Add,
            supersedes: None,
        },
    )
    .await;
    assert_eq!(resp.status(), StatusCode::OK);
    let block: Block = resp.json().await.unwrap();
    assert_eq!(block.height, 1);
    sdk.add_reference(Some("paula"), &r, TxKind::Modify, Some(block.tx.tx_id)).await.unwrap();

    let via_gw: Vec<TrajectoryEntry> = get(&gw, "/trajectory/paula").await.json().await.unwrap();
    assert_eq!(via_gw, sdk.get_trajectory(Some("paula")).await.unwrap());
    let view: CurrentView = get(&gw, "/trajectory/paula/current").await.json().await.unwrap();
    assert_eq!(view, sdk.current_view(Some("paula")).await.unwrap());

    let resp = get(&gw, "/evidence/1?patient_id=paula").await;
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["x-media-hint"], "text%2Fplain");
    assert_eq!(resp.bytes().await.unwrap().as_ref(), b"glucose");
    gw.shutdown().await;
    fed.shutdown().await;
}

#[tokio::test]
async fn error_mapping() {
    let fed = MiniFederation::start(1).await;
    let gw = serve(config(&fed, ConnectorMode::ViaMain)).await.unwrap();
    let r = fed.store_client().store(b"x".to_vec(), "t").await.unwrap();

    let anonymous = reqwest::get(gw.endpoint().url("/trajectory/paula")).await.unwrap();
    assert_eq!(anonymous.status(), StatusCode::UNAUTHORIZED);
    assert_eq!(reqwest::get(gw.endpoint().url("/health")).await.unwrap().status(), StatusCode::OK);

    let resp = post_ref(
        &gw,
        &ReferenceRequest {
            patient_id: Some("nobody".into()),
            reference: r.clone(),
            kind: TxKind::Add,
            supersedes: None,
        },
    )
    .await;
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);
    let body: ErrorBody = resp.json().await.unwrap();
    assert!(body.message.contains("nobody"), "{}", body.message);

    let missing_pid = ReferenceRequest {
        patient_id: None,
        reference: r.clone(),
        kind: TxKind::Add,
        supersedes: None,
    };
    assert_eq!(post_ref(&gw, &missing_pid).await.status(), StatusCode::UNPROCESSABLE_ENTITY);

    let ok = ReferenceRequest {
        patient_id: Some("paula".into()),
        ..missing_pid
    };
    assert_eq!(post_ref(&gw, &ok).await.status(), StatusCode::OK);
    std::fs::write(fed.store.store().content_path(r.resource_id().unwrap()), b"y").unwrap();
    assert_eq!(get(&gw, "/evidence/1?patient_id=paula").await.status(), StatusCode::BAD_GATEWAY);
    assert_eq!(get(&gw, "/evidence/7?patient_id=paula").await.status(), StatusCode::NOT_FOUND);
    gw.shutdown().await;
    fed.shutdown().await;
}

#[tokio::test]
async fn lost_quorum_is_503() {
    let mut fed = MiniFederation::start(2).await;
    let gw = serve(config(&fed, ConnectorMode::Direct)).await.unwrap();
    fed.stop_patient(1).await;
    let r = fed.store_client().store(b"x".to_vec(), "t").await.unwrap();
    let req = ReferenceRequest {
        patient_id: None,
        reference: r,
        kind: TxKind::Add,
        supersedes: None,
    };
    assert_eq!(post_ref(&gw, &req).await.status(), StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(get(&gw, "/trajectory/paula").await.status(), StatusCode::OK);
    assert_eq!(get(&gw, "/trajectory/pedro").await.status(), StatusCode::UNPROCESSABLE_ENTITY);
    gw.shutdown().await;
    fed.shutdown().await;
}

#[tokio::test]
async fn restart_changes_nothing_observable() {
    let fed = MiniFederation::start(1).await;
    let r = fed.store_client().store(b"x".to_vec(), "t").await.unwrap();
    let gw = serve(config(&fed, ConnectorMode::ViaMain)).await.unwrap();
    let req = ReferenceRequest {
        patient_id: Some("paula".into()),
        reference: r,
        kind: TxKind::Add,
        supersedes: None,
    };
    post_ref(&gw, &req).await;
    let before = get(&gw, "/trajectory/paula").await.text().await.unwrap();
    gw.shutdown().await;
    let gw = serve(config(&fed, ConnectorMode::ViaMain)).await.unwrap();
    assert_eq!(get(&gw, "/trajectory/paula").await.text().await.unwrap(), before);
    gw.shutdown().await;
    fed.shutdown().await;
}

#[tokio::test]
async fn startup_refusals() {
    let fed = MiniFederation::start(1).await;
    let mut open = config(&fed, ConnectorMode::ViaMain);
    open.bind_endpoint = Endpoint::parse("0.0.0.0:0").unwrap();
    open.auth_tokens.clear();
    assert!(matches!(serve(open).await, Err(GatewayError::Config(_))));

    let mut dead = config(&fed, ConnectorMode::ViaMain);
    dead.connector.target_endpoint = Endpoint::loopback(common::unused_port());
    assert!(matches!(serve(dead).await, Err(GatewayError::Probe(_))));

    let mut wrong = config(&fed, ConnectorMode::Direct);
    wrong.connector.target_endpoint = fed.main.endpoint().clone();
    assert!(matches!(serve(wrong).await, Err(GatewayError::Probe(_))));
    fed.shutdown().await;
}
