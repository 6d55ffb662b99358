//! Detached request signatures.
//!
//! A write request carries the actor fingerprint, a UNIX timestamp in seconds
//! and a base64 Ed25519 signature over [`signing_message`].

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use biotrak_core::{ActorRecord, ActorRegistry, Fingerprint, Signature, SigningKey};
use sha2::{Digest as _, Sha256};

pub const ACTOR_HEADER: &str = "x-biotrak-actor";
pub const TIMESTAMP_HEADER: &str = "x-biotrak-timestamp";
pub const SIGNATURE_HEADER: &str = "x-biotrak-signature";

/// Accepted clock skew between client and server.
pub const MAX_SKEW_SECS: u64 = 300;

const DOMAIN: &str = "biotrak-req-v1";

pub fn signing_message(method: &str, path: &str, body: &[u8], timestamp: u64) -> Vec<u8> {
    let digest = hex::encode(Sha256::digest(body));
    format!("{DOMAIN}\n{}\n{path}\n{digest}\n{timestamp}", method.to_ascii_uppercase()).into_bytes()
}

/// Header values for one signed request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthHeaders {
    pub actor: String,
    pub timestamp: String,
    pub signature: String,
}

impl AuthHeaders {
    pub fn sign(key: &SigningKey, method: &str, path: &str, body: &[u8], timestamp: u64) -> Self {
        let sig = key.sign(&signing_message(method, path, body, timestamp));
        AuthHeaders {
            actor: key.fingerprint().to_string(),
            timestamp: timestamp.to_string(),
            signature: STANDARD.encode(sig.0),
        }
    }

    pub fn pairs(&self) -> [(&'static str, &str); 3] {
        [(ACTOR_HEADER, &self.actor), (TIMESTAMP_HEADER, &self.timestamp), (SIGNATURE_HEADER, &self.signature)]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AuthError {
    #[error("missing header {0}")]
    Missing(&'static str),
    #[error("header {0} is malformed")]
    Malformed(&'static str),
    #[error("actor {0} is not registered")]
    UnknownActor(Fingerprint),
    #[error("timestamp {ts} is more than {MAX_SKEW_SECS} s from server time {now}")]
    Stale { ts: u64, now: u64 },
    #[error("signature does not verify against the actor's key")]
    BadSignature,
}

impl AuthError {
    pub fn code(&self) -> &'static str {
        match self {
            AuthError::Missing(_) => "missing-auth",
            AuthError::Malformed(_) => "malformed-auth",
            AuthError::UnknownActor(_) => "unknown-actor",
            AuthError::Stale { .. } => "stale-request",
            AuthError::BadSignature => "bad-signature",
        }
    }
}

/// Checks freshness and the signature, returning the actor's record.
pub fn verify<'a>(
    headers: &AuthHeaders,
    method: &str,
    path: &str,
    body: &[u8],
    now: u64,
    actors: &'a ActorRegistry,
) -> Result<&'a ActorRecord, AuthError> {
    let actor: Fingerprint = headers.actor.parse().map_err(|_| AuthError::Malformed(ACTOR_HEADER))?;
    let ts: u64 = headers.timestamp.parse().map_err(|_| AuthError::Malformed(TIMESTAMP_HEADER))?;
    let raw = STANDARD.decode(&headers.signature).map_err(|_| AuthError::Malformed(SIGNATURE_HEADER))?;
    let sig = Signature(raw.try_into().map_err(|_| AuthError::Malformed(SIGNATURE_HEADER))?);
    if ts.abs_diff(now) > MAX_SKEW_SECS {
        return Err(AuthError::Stale { ts, now });
    }
    let record = actors.get(&actor).ok_or(AuthError::UnknownActor(actor))?;
    if !record.public_key.verify(&signing_message(method, path, body, ts), &sig) {
        return Err(AuthError::BadSignature);
    }
    Ok(record)
}
