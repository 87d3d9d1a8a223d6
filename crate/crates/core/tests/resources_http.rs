use std::io::Write;
use std::process::{Command, Stdio};

use pht_core::ledger::Digest;
use pht_core::net::Endpoint;
use pht_core::resources::{fetch_ref, spawn_store, ResourceError, ResourcesClient, StoreConfig, StoreHandle};
use proptest::prelude::*;
use tempfile::TempDir;

const TOKEN: &str = "es-app-token";

async fn start() -> (StoreHandle, ResourcesClient, TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let handle = spawn_store(StoreConfig {
        listen_endpoint: Endpoint::loopback(0),
        data_dir: dir.path().to_path_buf(),
        auth_tokens: vec![TOKEN.into()],
    })
    .await
    .unwrap();
    let client = ResourcesClient::new(handle.endpoint().clone(), TOKEN);
    (handle, client, dir)
}

fn sha256sum(bytes: &[u8]) -> Option<String> {
    let mut child = Command::new("sha256sum")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .ok()?;
    child.stdin.take()?.write_all(bytes).ok()?;
    let out = child.wait_with_output().ok()?;
    Some(String::from_utf8(out.stdout).ok()?.split_whitespace().next()?.to_string())
}

#[tokio::test]
async fn roundtrip_and_reference_shape() {
    let (handle, client, _dir) = start().await;
    let doc = b"%PDF-1.4 glucose 5.4 mmol/L".to_vec();
    let r = client.store(doc.clone(), "application/pdf").await.unwrap();
    assert!(r.url.starts_with(&handle.endpoint().url("/resources/")));
    assert_eq!(r.access_key.len(), 64);
    assert_eq!(r.media_hint, "application/pdf");
    if let Some(hex) = sha256sum(&doc) {
        assert_eq!(r.content_hash.to_hex(), hex);
    }
    let id = r.resource_id().unwrap();
    assert_eq!(client.retrieve(id, &r.access_key).await.unwrap(), (doc.clone(), "application/pdf".into()));
    assert_eq!(fetch_ref(client.http(), &r).await.unwrap().0, doc);
    handle.shutdown().await;
}

#[tokio::test]
async fn hints_with_arbitrary_text_survive() {
    let (handle, client, _dir) = start().await;
    for hint in ["", "text/plain; charset=utf-8", "ñ/ü ✓ \"quoted\"", "a\nb"] {
        let r = client.store(b"x".to_vec(), hint).await.unwrap();
        assert_eq!(r.media_hint, hint);
        assert_eq!(fetch_ref(client.http(), &r).await.unwrap().1, hint);
    }
    handle.shutdown().await;
}

#[tokio::test]
async fn error_statuses() {
    let (handle, client, _dir) = start().await;
    let stranger = ResourcesClient::new(handle.endpoint().clone(), "nope");
    assert!(matches!(stranger.store(vec![1], "t").await, Err(ResourceError::Unauthorized(_))));

    let r = client.store(vec![1, 2, 3], "t").await.unwrap();
    let id = r.resource_id().unwrap();
    assert!(matches!(client.retrieve(id, &"f".repeat(64)).await, Err(ResourceError::WrongKey(_))));
    assert!(matches!(client.retrieve(&"a".repeat(64), &r.access_key).await, Err(ResourceError::NotFound(_))));
    assert!(matches!(stranger.delete(id, &r.access_key).await, Err(ResourceError::Unauthorized(_))));
    assert!(matches!(client.delete(id, "bad").await, Err(ResourceError::WrongKey(_))));
    assert!(client.retrieve(id, &r.access_key).await.is_ok());

    client.delete(id, &r.access_key).await.unwrap();
    assert!(matches!(client.retrieve(id, &r.access_key).await, Err(ResourceError::NotFound(_))));
    assert!(matches!(client.delete(id, &r.access_key).await, Err(ResourceError::NotFound(_))));
    handle.shutdown().await;
}

#[tokio::test]
async fn corrupted_content_is_an_integrity_error() {
    let (handle, client, _dir) = start().await;
    let r = client.store(b"original".to_vec(), "text/plain").await.unwrap();
    std::fs::write(handle.store().content_path(r.resource_id().unwrap()), b"tampered").unwrap();
    let err = fetch_ref(client.http(), &r).await.unwrap_err();
    assert!(matches!(err, ResourceError::Integrity { .. }), "{err}");
    handle.shutdown().await;
}

#[tokio::test]
async fn stopped_store_is_a_transport_error() {
    let (handle, client, _dir) = start().await;
    let r = client.store(b"x".to_vec(), "t").await.unwrap();
    handle.shutdown().await;
    assert!(matches!(fetch_ref(client.http(), &r).await, Err(ResourceError::Transport(_))));
}

#[tokio::test]
async fn data_dir_survives_restart() {
    let (handle, client, dir) = start().await;
    let r = client.store(vec![7; 4096], "application/octet-stream").await.unwrap();
    let endpoint = handle.endpoint().clone();
    handle.shutdown().await;
    let handle = spawn_store(StoreConfig {
        listen_endpoint: endpoint,
        data_dir: dir.path().to_path_buf(),
        auth_tokens: vec![TOKEN.into()],
    })
    .await
    .unwrap();
    assert_eq!(fetch_ref(client.http(), &r).await.unwrap().0, vec![7; 4096]);
    handle.shutdown().await;
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn any_payload_roundtrips(payload in proptest::collection::vec(any::<u8>(), 0..256 * 1024), hint in ".{0,40}") {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async {
            let (handle, client, _dir) = start().await;
            let r = client.store(payload.clone(), &hint).await.unwrap();
            assert_eq!(r.content_hash, Digest::of(&payload));
            let (back, back_hint) = fetch_ref(client.http(), &r).await.unwrap();
            assert_eq!(back, payload);
            assert_eq!(back_hint, hint);
            handle.shutdown().await;
        });
    }
}
