//! Textual QR payloads for lots, delivery notes and sensors.
//!
//! ```text
//! biotrak://lot/<id>?c=<hint>
//! biotrak://note/<id>?c=<hint>
//! biotrak://sensor/<sensor_id>/lot/<lot>?c=<hint>
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::tx::{DeliveryNoteId, LotCode};

const SCHEME: &str = "biotrak://";

/// First four bytes of the genesis hash, as 8 lowercase hex characters.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Default)]
pub struct ChainHint(pub [u8; 4]);

impl fmt::Display for ChainHint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl FromStr for ChainHint {
    type Err = CodesError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 8 || !s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
            return Err(CodesError::InvalidChainHint(s.to_owned()));
        }
        let mut out = [0u8; 4];
        hex::decode_to_slice(s, &mut out).map_err(|_| CodesError::InvalidChainHint(s.to_owned()))?;
        Ok(ChainHint(out))
    }
}

impl Serialize for ChainHint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ChainHint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeKind {
    Lot,
    DeliveryNote,
    Sensor,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CodePayload {
    Lot { lot: LotCode, chain_hint: ChainHint },
    DeliveryNote { note: DeliveryNoteId, chain_hint: ChainHint },
    Sensor { sensor_id: LotCode, lot: LotCode, chain_hint: ChainHint },
}

impl CodePayload {
    pub fn kind(&self) -> CodeKind {
        match self {
            CodePayload::Lot { .. } => CodeKind::Lot,
            CodePayload::DeliveryNote { .. } => CodeKind::DeliveryNote,
            CodePayload::Sensor { .. } => CodeKind::Sensor,
        }
    }

    /// The lot, note or sensor id named by the payload.
    pub fn subject_id(&self) -> &LotCode {
        match self {
            CodePayload::Lot { lot, .. } => lot,
            CodePayload::DeliveryNote { note, .. } => note,
            CodePayload::Sensor { sensor_id, .. } => sensor_id,
        }
    }

    /// The lot a Lot or Sensor payload refers to.
    pub fn lot(&self) -> Option<&LotCode> {
        match self {
            CodePayload::Lot { lot, .. } | CodePayload::Sensor { lot, .. } => Some(lot),
            CodePayload::DeliveryNote { .. } => None,
        }
    }

    pub fn chain_hint(&self) -> ChainHint {
        match self {
            CodePayload::Lot { chain_hint, .. }
            | CodePayload::DeliveryNote { chain_hint, .. }
            | CodePayload::Sensor { chain_hint, .. } => *chain_hint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodesError {
    #[error("unsupported payload")]
    UnsupportedPayload,
    #[error("invalid identifier {0:?}")]
    InvalidId(String),
    #[error("payload has no chain hint")]
    MissingChainHint,
    #[error("chain hint {0:?} is not 8 lowercase hex characters")]
    InvalidChainHint(String),
}

impl CodesError {
    pub fn code(&self) -> &'static str {
        match self {
            CodesError::UnsupportedPayload => "unsupported-payload",
            CodesError::InvalidId(_) => "invalid-id",
            CodesError::MissingChainHint => "missing-chain-hint",
            CodesError::InvalidChainHint(_) => "invalid-chain-hint",
        }
    }
}

pub fn encode_payload(p: &CodePayload) -> String {
    match p {
        CodePayload::Lot { lot, chain_hint } => format!("{SCHEME}lot/{lot}?c={chain_hint}"),
        CodePayload::DeliveryNote { note, chain_hint } => format!("{SCHEME}note/{note}?c={chain_hint}"),
        CodePayload::Sensor { sensor_id, lot, chain_hint } => {
            format!("{SCHEME}sensor/{sensor_id}/lot/{lot}?c={chain_hint}")
        }
    }
}

fn id(s: &str) -> Result<LotCode, CodesError> {
    LotCode::new(s).map_err(|_| CodesError::InvalidId(s.to_owned()))
}

pub fn parse_payload(s: &str) -> Result<CodePayload, CodesError> {
    let rest = s.strip_prefix(SCHEME).ok_or(CodesError::UnsupportedPayload)?;
    let (path, query) = match rest.split_once('?') {
        Some((p, q)) => (p, Some(q)),
        None => (rest, None),
    };
    let segments: Vec<&str> = path.split('/').collect();
    if !matches!(segments.as_slice(), ["lot", _] | ["note", _] | ["sensor", _, "lot", _]) {
        return Err(CodesError::UnsupportedPayload);
    }
    let ids = segments.iter().skip(1).step_by(2).map(|s| id(s)).collect::<Result<Vec<_>, _>>()?;
    let chain_hint = match query {
        None | Some("") => return Err(CodesError::MissingChainHint),
        Some(q) => match q.strip_prefix("c=") {
            Some(h) => h.parse()?,
            None if q.split('&').any(|kv| kv.starts_with("c=")) => return Err(CodesError::UnsupportedPayload),
            None => return Err(CodesError::MissingChainHint),
        },
    };
    let mut ids = ids.into_iter();
    let mut next = || ids.next().expect("segment count checked");
    Ok(match segments[0] {
        "lot" => CodePayload::Lot { lot: next(), chain_hint },
        "note" => CodePayload::DeliveryNote { note: next(), chain_hint },
        _ => CodePayload::Sensor { sensor_id: next(), lot: next(), chain_hint },
    })
}
