//! The router served from networked nodes over localhost TCP.

mod support;

use std::time::{Duration, Instant};

use axum::http::{Method, StatusCode};
use biotrak_api::views::{HeadView, HistoryView};
use biotrak_api::{now_secs, router, ApiConfig};
use biotrak_core::{Digest, SigningKey};
use biotrak_netsync::{Mode, Node, NodeConfig, Runtime, RuntimeConfig, Timing};
use support::{genesis_chain, send, World};

fn fast() -> Timing {
    Timing { heartbeat: 200, liveness: 1500, request_timeout: 500, proposal_retry: 150, forward: 200, lock: 5_000 }
}

async fn head(app: &axum::Router) -> HeadView {
    send(app, Method::GET, "/v1/chain/head", vec![], None, None).await.parse()
}

async fn wait_for_height(app: &axum::Router, height: u64) -> bool {
    let end = Instant::now() + Duration::from_secs(10);
    while Instant::now() < end {
        if head(app).await.height == height {
            return true;
        }
        tokio::time::sleep(Duration::from_millis(25)).await;
    }
    false
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn writes_through_an_authority_reach_the_replica() {
    let w = World::new();
    let mut auths = vec![];
    let mut addrs: Vec<String> = vec![];
    for key in &w.fx.authority_keys {
        let node = Node::new(
            NodeConfig { mode: Mode::Authoritative, key: key.clone(), timing: fast() },
            genesis_chain(&w.fx, &w.both),
            None,
        )
        .unwrap();
        let cfg =
            RuntimeConfig { listen: Some("127.0.0.1:0".parse().unwrap()), peers: addrs.clone(), ..Default::default() };
        let rt = Runtime::start(node, cfg).await.unwrap();
        addrs.push(rt.local_addr().unwrap().to_string());
        auths.push(rt);
    }
    let replica_node = Node::new(
        NodeConfig { mode: Mode::NonAuthoritative, key: SigningKey::from_seed([91; 32]), timing: fast() },
        genesis_chain(&w.fx, &w.both),
        None,
    )
    .unwrap();
    let replica =
        Runtime::start(replica_node, RuntimeConfig { peers: addrs.clone(), ..Default::default() }).await.unwrap();

    let api = router(std::sync::Arc::new(auths[0].clone()), ApiConfig::default());
    let replica_api =
        router(std::sync::Arc::new(replica.clone()), ApiConfig { forward_to: vec!["http://auth-0".into()] });

    let p = w.producer().clone();
    let t = w.transporter().clone();
    let txs = [
        (w.fx.inbound(&p, 1, &["MILK-1"], "DN-1"), &p),
        (w.fx.production(&p, 2, &["MILK-1"], "CHEESE-1"), &p),
        (w.fx.transport_start(&t, 3, &["CHEESE-1"], None), &t),
    ];
    for (i, (tx, key)) in txs.iter().enumerate() {
        let body = serde_json::to_vec(tx).unwrap();
        let r = send(&api, Method::POST, "/v1/tx", body, None, Some((key, now_secs()))).await;
        assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.body));
        let want = i as u64 + 1;
        assert!(wait_for_height(&replica_api, want).await, "replica reached height {want}");
    }
    let (a, r) = (head(&api).await, head(&replica_api).await);
    assert_eq!(a.block_hash, r.block_hash);
    assert_ne!(a.block_hash, Digest::ZERO);
    assert_eq!(r.mode, "non-authoritative");

    let h: HistoryView = send(&replica_api, Method::GET, "/v1/lots/CHEESE-1/history", vec![], None, None).await.parse();
    assert_eq!(h.node_count, 3);

    let body = serde_json::to_vec(&w.fx.inbound(&p, 9, &["MILK-9"], "DN-9")).unwrap();
    let r = send(&replica_api, Method::POST, "/v1/tx", body, None, Some((&p, now_secs()))).await;
    assert_eq!(r.status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(r.json()["error"]["forward_to"][0], "http://auth-0");

    for rt in auths.iter().chain([&replica]) {
        rt.shutdown();
    }
}
