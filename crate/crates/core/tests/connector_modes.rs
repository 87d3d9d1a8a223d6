mod common;

use common::MiniFederation;
use pht_core::connector::{Connector, ConnectorConfig, ConnectorError, ConnectorMode, TrajectoryEntry};
use pht_core::ledger::{Credential, Digest, TxKind};
use pht_core::net::Endpoint;
use pht_core::node::NodeClient;

async fn connector(mode: ConnectorMode, target: &Endpoint, cred: &Credential) -> Connector {
    Connector::connect(ConnectorConfig {
        mode,
        target_endpoint: target.clone(),
        credential: cred.clone(),
    })
    .await
    .unwrap()
}

/// Reads the chain over the raw node protocol and decodes descriptions by hand.
async fn hand_decoded(endpoint: &Endpoint) -> Vec<(u64, String, String, String, String)> {
    let blocks = NodeClient::new(endpoint.clone()).read_all().await.unwrap();
    blocks[1..]
        .iter()
        .map(|b| {
            let d = &b.tx.description;
            (
                b.height,
                b.tx.kind.to_string(),
                d.get("ref_url").unwrap().to_string(),
                d.get("content_hash").unwrap().to_string(),
                d.get("media_hint").unwrap().to_string(),
            )
        })
        .collect()
}

fn summary(entries: &[TrajectoryEntry]) -> Vec<(u64, String, String, String, String)> {
    entries
        .iter()
        .map(|e| {
            (
                e.height,
                e.kind.to_string(),
                e.reference.url.clone(),
                e.reference.content_hash.to_hex(),
                e.reference.media_hint.clone(),
            )
        })
        .collect()
}

#[tokio::test]
async fn via_main_and_direct_agree() {
    let fed = MiniFederation::start(1).await;
    let via = connector(ConnectorMode::ViaMain, fed.main.endpoint(), &fed.cn).await;
    let direct = connector(ConnectorMode::Direct, &fed.patient_endpoint(), &fed.es).await;
    assert_eq!(direct.subject(), Some("paula"));
    assert!(via.get_trajectory(Some("paula")).await.unwrap().is_empty());

    let store = fed.store_client();
    let mut previous: Vec<TrajectoryEntry> = Vec::new();
    for (i, hint) in ["text/plain", "application/pdf", "application/fhir+json"].iter().enumerate() {
        let r = store.store(format!("doc {i}").into_bytes(), hint).await.unwrap();
        let block = if i % 2 == 0 {
            via.add_reference(Some("paula"), &r, TxKind::Add, None).await.unwrap()
        } else {
            direct.add_reference(None, &r, TxKind::Add, None).await.unwrap()
        };
        assert_eq!(block.height, i as u64 + 1);
        let now = via.get_trajectory(Some("paula")).await.unwrap();
        assert_eq!(now.len(), previous.len() + 1);
        assert_eq!(&now[..previous.len()], &previous[..]);
        previous = now;
    }
    assert_eq!(direct.get_trajectory(None).await.unwrap(), previous);
    assert_eq!(direct.get_trajectory(Some("paula")).await.unwrap(), previous);
    assert_eq!(summary(&previous), hand_decoded(&fed.patient_endpoint()).await);
    assert_eq!(previous[0].creator.as_str(), "CN");
    assert_eq!(previous[1].creator.as_str(), "ES");
    fed.shutdown().await;
}

#[tokio::test]
async fn mode_rules() {
    let fed = MiniFederation::start(1).await;
    let via = connector(ConnectorMode::ViaMain, fed.main.endpoint(), &fed.cn).await;
    let direct = connector(ConnectorMode::Direct, &fed.patient_endpoint(), &fed.es).await;
    let r = fed.store_client().store(b"x".to_vec(), "t").await.unwrap();

    assert!(matches!(via.add_reference(Some("nobody"), &r, TxKind::Add, None).await, Err(ConnectorError::NotFound(_))));
    assert!(matches!(via.get_trajectory(Some("nobody")).await, Err(ConnectorError::NotFound(_))));
    assert!(matches!(via.get_trajectory(None).await, Err(ConnectorError::ModeMismatch(_))));
    assert!(matches!(direct.get_trajectory(Some("pedro")).await, Err(ConnectorError::ModeMismatch(_))));
    assert!(matches!(
        direct.add_reference(Some("pedro"), &r, TxKind::Add, None).await,
        Err(ConnectorError::ModeMismatch(_))
    ));
    assert!(matches!(
        direct.add_reference(None, &r, TxKind::Modify, None).await,
        Err(ConnectorError::Invalid(_))
    ));

    let wrong = Connector::connect(ConnectorConfig {
        mode: ConnectorMode::Direct,
        target_endpoint: fed.main.endpoint().clone(),
        credential: fed.es.clone(),
    })
    .await;
    assert!(matches!(wrong, Err(ConnectorError::ModeMismatch(_))));
    fed.shutdown().await;
}

#[tokio::test]
async fn modify_and_delete_materialize() {
    let fed = MiniFederation::start(1).await;
    let c = connector(ConnectorMode::ViaMain, fed.main.endpoint(), &fed.es).await;
    let store = fed.store_client();
    let a = store.store(b"a".to_vec(), "t").await.unwrap();
    let b = store.store(b"b".to_vec(), "t").await.unwrap();
    let first = c.add_reference(Some("paula"), &a, TxKind::Add, None).await.unwrap();
    let second = c.add_reference(Some("paula"), &b, TxKind::Add, None).await.unwrap();
    let a2 = store.store(b"a v2".to_vec(), "t").await.unwrap();
    c.add_reference(Some("paula"), &a2, TxKind::Modify, Some(first.tx.tx_id)).await.unwrap();
    c.add_reference(Some("paula"), &b, TxKind::Delete, Some(second.tx.tx_id)).await.unwrap();
    c.add_reference(Some("paula"), &b, TxKind::Delete, Some(Digest::of(b"nothing"))).await.unwrap();

    let view = c.current_view(Some("paula")).await.unwrap();
    let live: Vec<u64> = view.entries.iter().map(|e| e.height).collect();
    assert_eq!(live, [3]);
    assert_eq!(view.warnings.len(), 1);
    assert_eq!(c.fetch_evidence(&view.entries[0]).await.unwrap().0, b"a v2");
    fed.shutdown().await;
}

#[tokio::test]
async fn evidence_integrity_and_transport() {
    let fed = MiniFederation::start(1).await;
    let c = connector(ConnectorMode::ViaMain, fed.main.endpoint(), &fed.es).await;
    let store = fed.store_client();
    let doc = vec![0xAB; 2048];
    let r = store.store(doc.clone(), "application/octet-stream").await.unwrap();
    c.add_reference(Some("paula"), &r, TxKind::Add, None).await.unwrap();
    let entry = c.entry_at(Some("paula"), 1).await.unwrap();
    assert_eq!(c.fetch_evidence(&entry).await.unwrap(), (doc, "application/octet-stream".into()));
    assert!(matches!(c.entry_at(Some("paula"), 0).await, Err(ConnectorError::NotFound(_))));
    assert!(matches!(c.entry_at(Some("paula"), 9).await, Err(ConnectorError::NotFound(_))));

    std::fs::write(fed.store.store().content_path(r.resource_id().unwrap()), b"evil").unwrap();
    assert!(matches!(c.fetch_evidence(&entry).await, Err(ConnectorError::Integrity(_))));

    let MiniFederation { store: handle, .. } = fed;
    handle.shutdown().await;
    assert!(matches!(c.fetch_evidence(&entry).await, Err(ConnectorError::Transport(_))));
}

#[tokio::test]
async fn lost_quorum_is_unavailable() {
    // Two validators need both endorsements.
    let mut fed = MiniFederation::start(2).await;
    let c = connector(ConnectorMode::ViaMain, fed.main.endpoint(), &fed.es).await;
    let r = fed.store_client().store(b"x".to_vec(), "t").await.unwrap();
    c.add_reference(Some("paula"), &r, TxKind::Add, None).await.unwrap();
    fed.stop_patient(1).await;
    let err = c.add_reference(Some("paula"), &r, TxKind::Add, None).await.unwrap_err();
    assert!(matches!(err, ConnectorError::Unavailable(_)), "{err}");
    assert_eq!(c.get_trajectory(Some("paula")).await.unwrap().len(), 1);
    fed.shutdown().await;
}
