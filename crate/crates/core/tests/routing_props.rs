mod common;

use std::collections::BTreeSet;

use common::credential;
use pht_core::federation::{admit, build_routing_view, routing_tx, FederationClient, FederationError, RoutingView};
use pht_core::ledger::{Block, ChainKind, Role, Timestamp, TxKind};
use pht_core::net::Endpoint;
use pht_core::node::{spawn_node, NodeClient, NodeConfig};
use proptest::prelude::*;
use proptest::strategy::ValueTree;

#[derive(Clone, Debug)]
struct Event {
    relocate: bool,
    patient: usize,
    port: u16,
}

fn events(max_len: usize) -> impl Strategy<Value = (usize, Vec<Event>)> {
    (1usize..=20).prop_flat_map(move |patients| {
        let event = (any::<bool>(), 0..patients, 1u16..=60_000).prop_map(|(relocate, patient, port)| Event {
            relocate,
            patient,
            port,
        });
        (Just(patients), prop::collection::vec(event, 1..=max_len))
    })
}

fn pid(i: usize) -> String {
    format!("patient-{i:02}")
}

/// Latest routing record for `patient` found by scanning every block from
/// the tip down, reading raw description fields.
fn scan_oracle(blocks: &[Block], patient: &str) -> Option<(String, u64)> {
    blocks.iter().rev().find_map(|b| {
        let d = &b.tx.description;
        let routing = b.height > 0 && matches!(b.tx.kind, TxKind::Register | TxKind::Relocate);
        (routing && d.get("patient_id") == Some(patient)).then(|| (d.get("endpoint").unwrap().to_string(), b.height))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn view_matches_full_scan((patients, evs) in events(200)) {
        let es = credential("ES", Role::Institution);
        let mut blocks = vec![Block::genesis("main", "federation", &es, Timestamp(0)).unwrap()];
        let mut view = RoutingView::new();
        for (i, e) in evs.iter().enumerate() {
            let kind = if e.relocate { TxKind::Relocate } else { TxKind::Register };
            let mut tx = routing_tx(kind, &pid(e.patient), &Endpoint::loopback(e.port), &es).unwrap();
            tx.created_at = Timestamp(i as i64);
            match admit(&view, &tx, es.identity()) {
                Ok(()) => {
                    let tip = blocks.last().unwrap();
                    let block = Block::new(tip.height + 1, tip.block_hash, tx);
                    view.apply(&block);
                    blocks.push(block);
                }
                Err(FederationError::AlreadyRegistered(_)) => prop_assert!(!e.relocate),
                Err(FederationError::NotFound(_)) => prop_assert!(e.relocate),
                Err(other) => prop_assert!(false, "unexpected {other}"),
            }
        }
        let rebuilt = build_routing_view(&blocks);
        prop_assert_eq!(&rebuilt, &view);
        for p in 0..patients {
            let got = view.resolve(&pid(p)).map(|r| (r.chain_endpoint.to_string(), r.recorded_at));
            prop_assert_eq!(got, scan_oracle(&blocks, &pid(p)));
        }
    }
}

#[tokio::test]
async fn live_node_matches_full_scan() {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let strategy = events(120);
    for _ in 0..6 {
        let (patients, evs) = strategy.new_tree(&mut runner).unwrap().current();
        let dir = tempfile::tempdir().unwrap();
        let es = credential("ES", Role::Institution);
        let cn = credential("CN", Role::Institution);
        let key = credential("main.v0", Role::Institution);
        let node = spawn_node(NodeConfig {
            node_id: key.actor_id().clone(),
            chain_id: "main".into(),
            chain_kind: ChainKind::Main,
            listen_endpoint: Endpoint::loopback(0),
            peer_endpoints: vec![],
            validator_identities: vec![key.identity().clone()],
            writer_identities: vec![es.identity().clone(), cn.identity().clone()],
            data_dir: dir.path().to_path_buf(),
            is_leader: true,
            node_key: key,
            genesis: Block::genesis("main", "federation", &es, Timestamp(0)).unwrap(),
            sync_interval_ms: 0,
            peer_timeout_ms: 1_000,
        })
        .await
        .unwrap();
        let fed = FederationClient::new(node.endpoint().clone());
        let mut registered = BTreeSet::new();
        for e in &evs {
            let inst = if e.port % 2 == 0 { &es } else { &cn };
            let ep = Endpoint::loopback(e.port);
            let result = if e.relocate {
                fed.relocate_patient(&pid(e.patient), &ep, inst).await
            } else {
                fed.register_patient(&pid(e.patient), &ep, inst).await
            };
            match result {
                Ok(_) => {
                    registered.insert(e.patient);
                }
                Err(FederationError::AlreadyRegistered(_)) => assert!(!e.relocate && registered.contains(&e.patient)),
                Err(FederationError::NotFound(_)) => assert!(e.relocate && !registered.contains(&e.patient)),
                // Same payload within one millisecond yields the same tx id.
                Err(FederationError::Node(pht_core::node::NodeError::Duplicate(_))) => {}
                Err(other) => panic!("unexpected {other}"),
            }
        }
        let blocks = NodeClient::new(node.endpoint().clone()).read_all().await.unwrap();
        for p in 0..patients {
            let got = match fed.resolve_entry(&pid(p)).await {
                Ok(r) => Some((r.chain_endpoint.to_string(), r.recorded_at)),
                Err(FederationError::NotFound(_)) => None,
                Err(other) => panic!("unexpected {other}"),
            };
            assert_eq!(got, scan_oracle(&blocks, &pid(p)));
        }
        node.shutdown().await;
    }
}
