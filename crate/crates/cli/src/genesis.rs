//! Genesis spec files.
//!
//! ```toml
//! chain_name = "valley-coop"
//!
//! [policy]
//! min_temp = 0.0
//! max_temp = 8.0
//! max_excursion_seconds = 1800
//!
//! [[actors]]
//! key_file = "keys/farm.pub"     # or public_key = "<64 hex>"
//! roles = ["producer"]
//! display_name = "Valley Farm"
//! ```
//!
//! Authority keys come from the command line, in order, each a hex key or
//! a `.pub` path, optionally followed by `@host:port`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use biotrak_core::{
    make_genesis, ActorGrant, AuthorityEntry, Block, ChainState, ColdChainPolicy, GenesisConfig, PublicKey, Role,
};
use serde::Deserialize;

use crate::error::CliError;
use crate::keyfile::read_public_key;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenesisSpec {
    chain_name: String,
    #[serde(default)]
    policy: Option<ColdChainPolicy>,
    #[serde(default)]
    actors: Vec<ActorSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActorSpec {
    #[serde(default)]
    public_key: Option<PublicKey>,
    #[serde(default)]
    key_file: Option<PathBuf>,
    roles: BTreeSet<Role>,
    display_name: String,
}

fn authority_entry(arg: &str) -> Result<AuthorityEntry, CliError> {
    let (key, endpoint) = match arg.rsplit_once('@') {
        Some((k, e)) => (k, e.to_owned()),
        None => (arg, String::new()),
    };
    Ok(AuthorityEntry { public_key: read_public_key(key)?, endpoint })
}

pub fn build(spec_path: &Path, authorities: &[String], timestamp: u64) -> Result<Block, CliError> {
    let text = fs::read_to_string(spec_path).map_err(CliError::io(spec_path.display().to_string()))?;
    let spec: GenesisSpec =
        toml::from_str(&text).map_err(|e| CliError::InvalidSpec(format!("{}: {e}", spec_path.display())))?;
    if let Some(p) = &spec.policy {
        ColdChainPolicy::new(p.min_temp, p.max_temp, p.max_excursion_seconds)
            .map_err(|e| CliError::InvalidSpec(format!("{}: {e}", spec_path.display())))?;
    }
    let base = spec_path.parent().unwrap_or(Path::new("."));
    let mut actors = Vec::with_capacity(spec.actors.len());
    for a in spec.actors {
        let public_key = match (a.public_key, a.key_file) {
            (Some(k), None) => k,
            (None, Some(f)) => read_public_key(&base.join(f).to_string_lossy())?,
            _ => {
                return Err(CliError::InvalidSpec(format!(
                    "actor {:?}: give exactly one of public_key and key_file",
                    a.display_name
                )))
            }
        };
        actors.push(ActorGrant { public_key, roles: a.roles, display_name: a.display_name });
    }
    let config = GenesisConfig {
        chain_name: spec.chain_name,
        timestamp,
        authorities: authorities.iter().map(|a| authority_entry(a)).collect::<Result<_, _>>()?,
        actors,
        policy: spec.policy,
    };
    make_genesis(&config).map_err(|e| CliError::InvalidSpec(format!("{}: {e}", e.code())))
}

pub fn load(path: &Path) -> Result<ChainState, CliError> {
    let bytes = fs::read(path).map_err(CliError::io(path.display().to_string()))?;
    let block = Block::from_canonical_bytes(&bytes)
        .map_err(|e| CliError::InvalidSpec(format!("{}: not a genesis block: {e}", path.display())))?;
    ChainState::new(block).map_err(|e| CliError::InvalidSpec(format!("{}: {e}", path.display())))
}
