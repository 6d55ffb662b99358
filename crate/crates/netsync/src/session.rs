//! Peer handshake.

use biotrak_core::{AuthoritySet, ChainId, Fingerprint, PublicKey};

use crate::wire::{Hello, Mode};

/// Allowed distance between a hello's timestamp and the local clock.
pub const MAX_HELLO_SKEW_SECS: u64 = 300;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerSession {
    pub peer_id: Fingerprint,
    pub peer_key: PublicKey,
    pub mode: Mode,
    pub chain_id: ChainId,
    pub head_height: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HandshakeError {
    #[error("peer is on chain {theirs}, local chain is {ours}")]
    ChainMismatch { ours: ChainId, theirs: ChainId },
    #[error("peer {0} claims authority without a valid authority signature")]
    AuthorityImpersonation(Fingerprint),
    #[error("hello signature does not verify")]
    BadSignature,
    #[error("hello timestamp {0} is outside the allowed skew")]
    Stale(u64),
}

impl HandshakeError {
    pub fn code(&self) -> &'static str {
        match self {
            HandshakeError::ChainMismatch { .. } => "chain-mismatch",
            HandshakeError::AuthorityImpersonation(_) => "authority-impersonation",
            HandshakeError::BadSignature => "bad-hello",
            HandshakeError::Stale(_) => "stale-hello",
        }
    }
}

/// Accepts or refuses a peer's hello.
///
/// An authoritative claim must come from a key in `authorities` and carry a
/// valid signature over the hello fields.
pub fn handshake(
    chain_id: ChainId,
    authorities: &AuthoritySet,
    hello: &Hello,
    now_secs: u64,
) -> Result<PeerSession, HandshakeError> {
    if hello.chain_id != chain_id {
        return Err(HandshakeError::ChainMismatch { ours: chain_id, theirs: hello.chain_id });
    }
    let peer_id = hello.node_key.fingerprint();
    let signed = hello.verify_signature();
    if hello.mode == Mode::Authoritative {
        let registered = authorities.by_id(&peer_id).is_some_and(|a| a.public_key == hello.node_key);
        if !registered || !signed {
            return Err(HandshakeError::AuthorityImpersonation(peer_id));
        }
    } else if !signed {
        return Err(HandshakeError::BadSignature);
    }
    if hello.timestamp.abs_diff(now_secs) > MAX_HELLO_SKEW_SECS {
        return Err(HandshakeError::Stale(hello.timestamp));
    }
    Ok(PeerSession { peer_id, peer_key: hello.node_key, mode: hello.mode, chain_id, head_height: hello.head_height })
}
