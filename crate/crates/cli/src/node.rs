//! `biotrak run`: node config and startup.
//!
//! ```toml
//! data_dir = "data/a0"
//! mode = "authoritative"          # or "non-authoritative"
//! key_path = "keys/a0"            # required when authoritative
//! genesis = "genesis.bin"
//! listen = "0.0.0.0:7000"         # peer protocol; omit to only dial out
//! api_listen = "0.0.0.0:8080"
//! peers = ["10.0.0.2:7000", "10.0.0.3:7000"]
//! forward_to = ["https://a0.example.org"]
//! ```
//!
//! Relative paths are resolved against the config file's directory.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use biotrak_api::{router, ApiConfig};
use biotrak_core::SigningKey;
use biotrak_netsync::{Mode, Node, NodeConfig, NodeError, Runtime, RuntimeConfig, Timing};
use biotrak_store::BlockStore;
use serde::Deserialize;

use crate::error::CliError;
use crate::genesis;
use crate::keyfile::read_signing_key;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeSetting {
    Authoritative,
    NonAuthoritative,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeFileConfig {
    pub data_dir: PathBuf,
    pub mode: ModeSetting,
    #[serde(default)]
    pub key_path: Option<PathBuf>,
    pub genesis: PathBuf,
    #[serde(default)]
    pub listen: Option<SocketAddr>,
    pub api_listen: SocketAddr,
    #[serde(default)]
    pub peers: Vec<String>,
    #[serde(default)]
    pub forward_to: Vec<String>,
}

impl NodeFileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(CliError::io(path.display().to_string()))?;
        let mut cfg: NodeFileConfig =
            toml::from_str(&text).map_err(|e| CliError::InvalidSpec(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data_dir = base.join(&cfg.data_dir);
        cfg.genesis = base.join(&cfg.genesis);
        cfg.key_path = cfg.key_path.map(|k| base.join(k));
        if cfg.mode == ModeSetting::Authoritative && cfg.key_path.is_none() {
            return Err(CliError::InvalidSpec("authoritative mode requires key_path".into()));
        }
        Ok(cfg)
    }
}

/// Opens storage and checks the key. Fails before anything listens.
pub fn open(cfg: &NodeFileConfig) -> Result<Node, CliError> {
    let chain = genesis::load(&cfg.genesis)?;
    let key = match &cfg.key_path {
        Some(p) => read_signing_key(p)?,
        None => SigningKey::generate().map_err(|e| CliError::Refused(format!("cannot generate node key: {e}")))?,
    };
    let mode = match cfg.mode {
        ModeSetting::Authoritative => Mode::Authoritative,
        ModeSetting::NonAuthoritative => Mode::NonAuthoritative,
    };
    fs::create_dir_all(&cfg.data_dir).map_err(CliError::io(cfg.data_dir.display().to_string()))?;
    let store = BlockStore::open(&cfg.data_dir).map_err(|e| CliError::Refused(format!("{}: {e}", e.code())))?;
    let node_cfg = NodeConfig { mode, key, timing: Timing::default() };
    let node = Node::open(node_cfg, chain.genesis().clone(), store).map_err(|e| match e {
        NodeError::NotAnAuthority(fp) => {
            CliError::Refused(format!("not-an-authority: key {fp} is not in the chain's authority set"))
        }
        e => CliError::Refused(format!("{}: {e}", e.code())),
    })?;
    if node.chain().chain_id() != chain.chain_id() {
        return Err(CliError::Refused(format!(
            "chain-mismatch: {} holds chain {}, genesis file is {}",
            cfg.data_dir.display(),
            node.chain().chain_id(),
            chain.chain_id()
        )));
    }
    Ok(node)
}

pub fn run(cfg: NodeFileConfig) -> Result<(), CliError> {
    let node = open(&cfg)?;
    let rt = tokio::runtime::Runtime::new().map_err(CliError::io("tokio runtime"))?;
    rt.block_on(async move {
        let fingerprint = node.id();
        let mode = node.mode();
        let runtime =
            Runtime::start(node, RuntimeConfig { listen: cfg.listen, peers: cfg.peers, ..Default::default() })
                .await
                .map_err(CliError::io("peer listener"))?;
        let api = tokio::net::TcpListener::bind(cfg.api_listen).await.map_err(CliError::io("api listener"))?;
        let api_addr = api.local_addr().map_err(CliError::io("api listener"))?;
        let peer_addr = runtime.local_addr().map_or_else(|| "-".to_owned(), |a| a.to_string());
        println!("node {fingerprint} {} peer {peer_addr} api {api_addr}", mode.as_str());
        let app = router(Arc::new(runtime.clone()), ApiConfig { forward_to: cfg.forward_to });
        let result = tokio::select! {
            r = biotrak_api::serve(api, app) => r.map_err(CliError::io("api server")),
            _ = tokio::signal::ctrl_c() => Ok(()),
        };
        runtime.shutdown();
        result
    })
}
