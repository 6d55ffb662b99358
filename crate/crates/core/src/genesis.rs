//! Genesis construction and decoding.
//!
//! The genesis block carries a Production-typed bootstrap transaction whose
//! parameters hold the chain name, the ordered authority set, the actor role
//! grants and the cold-chain policy:
//!
//! | key                               | value                          |
//! |-----------------------------------|--------------------------------|
//! | `genesis.chain_name`              | string                         |
//! | `authority.NNN.key`               | 32-byte public key             |
//! | `authority.NNN.endpoint`          | string                         |
//! | `actor.<fingerprint>.key`         | 32-byte public key             |
//! | `actor.<fingerprint>.roles`       | comma separated role names     |
//! | `actor.<fingerprint>.name`        | display name                   |
//! | `coldchain.min_temp` / `max_temp` | decimal, one fractional digit  |
//! | `coldchain.max_excursion_seconds` | integer                        |

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::actors::{roles_from_str, roles_to_string, ActorRecord, ActorRegistry};
use crate::block::{hash_block, Block, BlockHeader};
use crate::coldchain::{ColdChainPolicy, Temperature};
use crate::consensus::{Authority, AuthoritySet, MIN_AUTHORITIES};
use crate::digest::{ChainId, Digest, TxId};
use crate::keys::{ActorId, Fingerprint, PublicKey, Signature};
use crate::tx::{Decimal, ParamValue, Parameters, ProcessTransaction, ProcessType, Role, GENESIS_MARKER_KEY};

const MAX_AUTHORITIES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorityEntry {
    pub public_key: PublicKey,
    #[serde(default)]
    pub endpoint: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorGrant {
    pub public_key: PublicKey,
    pub roles: BTreeSet<Role>,
    pub display_name: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenesisConfig {
    pub chain_name: String,
    pub timestamp: u64,
    pub authorities: Vec<AuthorityEntry>,
    #[serde(default)]
    pub actors: Vec<ActorGrant>,
    #[serde(default)]
    pub policy: Option<ColdChainPolicy>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GenesisError {
    #[error("at least {MIN_AUTHORITIES} authorities are required, got {0}")]
    TooFewAuthorities(usize),
    #[error("more than {MAX_AUTHORITIES} authorities")]
    TooManyAuthorities,
    #[error("authority key {0} listed twice")]
    DuplicateAuthority(Fingerprint),
    #[error("actor key {0} listed twice")]
    DuplicateActor(Fingerprint),
    #[error("chain name must be nonempty")]
    EmptyChainName,
    #[error("not a genesis block: {0}")]
    NotGenesis(&'static str),
    #[error("genesis parameter {0} is malformed")]
    BadParameter(String),
}

impl GenesisError {
    pub fn code(&self) -> &'static str {
        match self {
            GenesisError::TooFewAuthorities(_) => "minimum-authorities",
            _ => "invalid-genesis",
        }
    }
}

fn authority_key(i: usize, field: &str) -> String {
    format!("authority.{i:03}.{field}")
}

fn actor_key(id: &ActorId, field: &str) -> String {
    format!("actor.{id}.{field}")
}

fn temp_param(t: Temperature) -> ParamValue {
    ParamValue::Decimal(Decimal { mantissa: i64::from(t.tenths()), scale: 1 })
}

/// Builds the height-0 block for a deployment.
pub fn make_genesis(config: &GenesisConfig) -> Result<Block, GenesisError> {
    if config.chain_name.is_empty() {
        return Err(GenesisError::EmptyChainName);
    }
    let n = config.authorities.len();
    if n < MIN_AUTHORITIES {
        return Err(GenesisError::TooFewAuthorities(n));
    }
    if n > MAX_AUTHORITIES {
        return Err(GenesisError::TooManyAuthorities);
    }
    let mut params = Parameters::new();
    params.insert(GENESIS_MARKER_KEY.into(), ParamValue::Str(config.chain_name.clone()));
    let mut seen = HashSet::new();
    for (i, a) in config.authorities.iter().enumerate() {
        if !seen.insert(a.public_key.to_bytes()) {
            return Err(GenesisError::DuplicateAuthority(a.public_key.fingerprint()));
        }
        params.insert(authority_key(i, "key"), ParamValue::Bytes(a.public_key.to_bytes().to_vec()));
        params.insert(authority_key(i, "endpoint"), ParamValue::Str(a.endpoint.clone()));
    }
    let mut seen = HashSet::new();
    for a in &config.actors {
        let id = a.public_key.fingerprint();
        if !seen.insert(id) {
            return Err(GenesisError::DuplicateActor(id));
        }
        params.insert(actor_key(&id, "key"), ParamValue::Bytes(a.public_key.to_bytes().to_vec()));
        params.insert(actor_key(&id, "roles"), ParamValue::Str(roles_to_string(&a.roles)));
        params.insert(actor_key(&id, "name"), ParamValue::Str(a.display_name.clone()));
    }
    if let Some(p) = &config.policy {
        params.insert("coldchain.min_temp".into(), temp_param(p.min_temp));
        params.insert("coldchain.max_temp".into(), temp_param(p.max_temp));
        params.insert(
            "coldchain.max_excursion_seconds".into(),
            ParamValue::Int(i64::try_from(p.max_excursion_seconds).unwrap_or(i64::MAX)),
        );
    }

    let mut seed = b"biotrak-genesis".to_vec();
    seed.extend_from_slice(config.chain_name.as_bytes());
    seed.extend_from_slice(&config.timestamp.to_be_bytes());
    let tx = ProcessTransaction {
        tx_id: TxId::derive(&seed),
        process_type: ProcessType::Production,
        actor_id: ActorId::default(),
        role: Role::Producer,
        input_lots: Vec::new(),
        output_lot: None,
        delivery_note: None,
        transport_ref: None,
        supersedes: None,
        sensor_series: None,
        parameters: params,
        created_at: config.timestamp,
    };
    let tx_hash = tx.tx_hash().map_err(|_| GenesisError::NotGenesis("bootstrap transaction malformed"))?;
    let header = BlockHeader {
        height: 0,
        prev_hash: Digest::ZERO,
        timestamp: config.timestamp,
        proposer: Fingerprint::default(),
        tx_hash,
    };
    Ok(Block {
        block_hash: hash_block(&header),
        header,
        transaction: tx,
        proposer_signature: Signature::EMPTY,
        countersignatures: Vec::new(),
    })
}

/// Everything a node derives from the genesis block.
#[derive(Clone, Debug)]
pub struct GenesisInfo {
    pub chain_id: ChainId,
    pub chain_name: String,
    pub authorities: AuthoritySet,
    pub actors: ActorRegistry,
    pub policy: Option<ColdChainPolicy>,
}

impl GenesisInfo {
    pub fn from_block(block: &Block) -> Result<Self, GenesisError> {
        let h = &block.header;
        if h.height != 0 {
            return Err(GenesisError::NotGenesis("height is not zero"));
        }
        if !h.prev_hash.is_zero() {
            return Err(GenesisError::NotGenesis("prev_hash is not zero"));
        }
        if block.verify_integrity().is_err() {
            return Err(GenesisError::NotGenesis("hash mismatch"));
        }
        if !block.countersignatures.is_empty() {
            return Err(GenesisError::NotGenesis("genesis carries signatures"));
        }
        let tx = &block.transaction;
        if !tx.is_bootstrap() {
            return Err(GenesisError::NotGenesis("missing bootstrap transaction"));
        }
        let p = &tx.parameters;
        let bad = |k: &str| GenesisError::BadParameter(k.to_owned());
        let chain_name = p
            .get(GENESIS_MARKER_KEY)
            .and_then(ParamValue::as_str)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| bad(GENESIS_MARKER_KEY))?
            .to_owned();

        let key_of = |k: &str| -> Result<PublicKey, GenesisError> {
            p.get(k).and_then(ParamValue::as_bytes).and_then(|b| PublicKey::from_slice(b).ok()).ok_or_else(|| bad(k))
        };

        let mut authorities = Vec::new();
        for i in 0.. {
            let k = authority_key(i, "key");
            if !p.contains_key(&k) {
                break;
            }
            let public_key = key_of(&k)?;
            let ek = authority_key(i, "endpoint");
            let endpoint = p.get(&ek).and_then(ParamValue::as_str).ok_or_else(|| bad(&ek))?.to_owned();
            authorities.push(Authority { id: public_key.fingerprint(), public_key, endpoint });
        }
        let authorities = AuthoritySet::new(authorities).map_err(|e| match e {
            crate::consensus::AuthoritySetError::TooFew(n) => GenesisError::TooFewAuthorities(n),
            crate::consensus::AuthoritySetError::Duplicate(id) => GenesisError::DuplicateAuthority(id),
        })?;

        let mut actors = ActorRegistry::default();
        for key in p.keys().filter(|k| k.starts_with("actor.") && k.ends_with(".key")) {
            let public_key = key_of(key)?;
            let id = public_key.fingerprint();
            if *key != actor_key(&id, "key") {
                return Err(bad(key));
            }
            let rk = actor_key(&id, "roles");
            let roles =
                p.get(&rk).and_then(ParamValue::as_str).and_then(|s| roles_from_str(s).ok()).ok_or_else(|| bad(&rk))?;
            let nk = actor_key(&id, "name");
            let display_name = p.get(&nk).and_then(ParamValue::as_str).ok_or_else(|| bad(&nk))?.to_owned();
            actors.insert(ActorRecord { actor_id: id, public_key, roles, display_name });
        }

        let temp = |k: &str| match p.get(k) {
            Some(ParamValue::Decimal(Decimal { mantissa, scale: 1 })) => {
                i32::try_from(*mantissa).map(Temperature::from_tenths).map_err(|_| bad(k))
            }
            _ => Err(bad(k)),
        };
        let policy = if p.contains_key("coldchain.min_temp") {
            let max_exc = p
                .get("coldchain.max_excursion_seconds")
                .and_then(ParamValue::as_int)
                .and_then(|v| u64::try_from(v).ok())
                .ok_or_else(|| bad("coldchain.max_excursion_seconds"))?;
            Some(
                ColdChainPolicy::new(temp("coldchain.min_temp")?, temp("coldchain.max_temp")?, max_exc)
                    .map_err(|_| bad("coldchain"))?,
            )
        } else {
            None
        };

        Ok(GenesisInfo { chain_id: ChainId(block.block_hash), chain_name, authorities, actors, policy })
    }
}
