#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use biotrak_api::{now_secs, router, ApiConfig, AuthHeaders, LocalLedger};
use biotrak_core::testkit::Fixture;
use biotrak_core::{
    make_genesis, ActorGrant, AuthorityEntry, ChainState, ColdChainPolicy, GenesisConfig, Role, SigningKey,
};
use serde_json::Value;
use tower::ServiceExt;

pub const BOUNDARY: &str = "biotrak-test-boundary";

/// Keys, a genesis granting producers, transporters and one actor holding
/// both roles, and an in-process ledger behind the router.
pub struct World {
    pub fx: Fixture,
    pub both: SigningKey,
    pub stranger: SigningKey,
    pub ledger: Arc<LocalLedger>,
    pub app: Router,
}

pub fn genesis_chain(fx: &Fixture, both: &SigningKey) -> ChainState {
    let grant = |k: &SigningKey, roles: &[Role], name: &str| ActorGrant {
        public_key: k.public_key(),
        roles: roles.iter().copied().collect::<BTreeSet<_>>(),
        display_name: name.to_owned(),
    };
    let mut actors = vec![];
    for (i, k) in fx.producers.iter().enumerate() {
        actors.push(grant(k, &[Role::Producer], &format!("Farm {i}")));
    }
    for (i, k) in fx.transporters.iter().enumerate() {
        actors.push(grant(k, &[Role::Transporter], &format!("Carrier {i}")));
    }
    actors.push(grant(both, &[Role::Producer, Role::Transporter], "Co-op"));
    let cfg = GenesisConfig {
        chain_name: "api-test".into(),
        timestamp: 1_700_000_000,
        authorities: fx
            .authority_keys
            .iter()
            .map(|k| AuthorityEntry { public_key: k.public_key(), endpoint: String::new() })
            .collect(),
        actors,
        policy: Some(ColdChainPolicy::default()),
    };
    ChainState::new(make_genesis(&cfg).unwrap()).unwrap()
}

impl World {
    pub fn new() -> Self {
        let fx = Fixture::new(3, 2, 2);
        let both = SigningKey::from_seed([77; 32]);
        let chain = genesis_chain(&fx, &both);
        let ledger = Arc::new(LocalLedger::new(chain, fx.authority_keys.clone()).unwrap());
        let app = router(ledger.clone(), ApiConfig::default());
        World { fx, both, stranger: SigningKey::from_seed([66; 32]), ledger, app }
    }

    pub fn producer(&self) -> &SigningKey {
        &self.fx.producers[0]
    }

    pub fn transporter(&self) -> &SigningKey {
        &self.fx.transporters[0]
    }

    pub async fn get(&self, path: &str) -> Reply {
        send(&self.app, Method::GET, path, Vec::new(), None, None).await
    }

    pub async fn post_json(&self, path: &str, body: &impl serde::Serialize, key: Option<&SigningKey>) -> Reply {
        let body = serde_json::to_vec(body).unwrap();
        send(&self.app, Method::POST, path, body, Some("application/json"), key.map(|k| (k, now_secs()))).await
    }

    pub async fn terminate(&self, start: &str, dump: &[u8], key: &SigningKey) -> Reply {
        let path = format!("/v1/transport/{start}/terminate");
        let (ct, body) = multipart(dump);
        send(&self.app, Method::POST, &path, body, Some(&ct), Some((key, now_secs()))).await
    }
}

#[derive(Debug)]
pub struct Reply {
    pub status: StatusCode,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }

    pub fn code(&self) -> String {
        self.json()["error"]["code"].as_str().unwrap_or_default().to_owned()
    }

    pub fn parse<T: serde::de::DeserializeOwned>(&self) -> T {
        serde_json::from_slice(&self.body).unwrap()
    }
}

pub fn multipart(dump: &[u8]) -> (String, Vec<u8>) {
    let mut body = format!(
        "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"dump\"; filename=\"logger.csv\"\r\n\
         Content-Type: text/csv\r\n\r\n"
    )
    .into_bytes();
    body.extend_from_slice(dump);
    body.extend_from_slice(format!("\r\n--{BOUNDARY}--\r\n").as_bytes());
    (format!("multipart/form-data; boundary={BOUNDARY}"), body)
}

pub async fn send(
    app: &Router,
    method: Method,
    path: &str,
    body: Vec<u8>,
    content_type: Option<&str>,
    signer: Option<(&SigningKey, u64)>,
) -> Reply {
    let mut req = Request::builder().method(method.clone()).uri(path);
    if let Some(ct) = content_type {
        req = req.header("content-type", ct);
    }
    if let Some((key, ts)) = signer {
        let uri_path = path.split('?').next().unwrap();
        for (name, value) in AuthHeaders::sign(key, method.as_str(), uri_path, &body, ts).pairs() {
            req = req.header(name, value);
        }
    }
    let resp = app.clone().oneshot(req.body(Body::from(body)).unwrap()).await.unwrap();
    let status = resp.status();
    let body = to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec();
    Reply { status, body }
}
