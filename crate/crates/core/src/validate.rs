//! Structural and consensus checks for a block against its parent.

use crate::block::{hash_block, Block};
use crate::consensus::{count_signers, proposer_for_height, AuthoritySet, ConsensusError};
use crate::keys::AuthorityId;
use crate::tx::ShapeError;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BlockError {
    #[error("block hash does not match header")]
    BadBlockHash,
    #[error("prev_hash does not name the parent")]
    BadLink,
    #[error("height {got}, expected {expected}")]
    BadHeight { expected: u64, got: u64 },
    #[error("timestamp precedes parent")]
    BadTimestamp,
    #[error("transaction hash does not match header")]
    BadTxHash,
    #[error("malformed transaction: {0}")]
    MalformedTx(ShapeError),
    #[error("bootstrap transaction outside genesis")]
    MisplacedBootstrap,
    #[error("proposer {0} is not scheduled for this height")]
    BadProposer(AuthorityId),
    #[error("signature from {0} does not verify")]
    BadSignature(AuthorityId),
    #[error("authority {0} signed twice")]
    DuplicateSigner(AuthorityId),
    #[error("countersigner {0} is not an authority")]
    UnknownSigner(AuthorityId),
    #[error("{have} signatures, {need} required")]
    BelowThreshold { have: usize, need: usize },
}

impl BlockError {
    pub fn code(&self) -> &'static str {
        match self {
            BlockError::BadBlockHash => "bad-block-hash",
            BlockError::BadLink => "bad-link",
            BlockError::BadHeight { .. } => "bad-height",
            BlockError::BadTimestamp => "bad-timestamp",
            BlockError::BadTxHash => "bad-tx-hash",
            BlockError::MalformedTx(e) => e.code(),
            BlockError::MisplacedBootstrap => "malformed-tx",
            BlockError::BadProposer(_) => "bad-proposer",
            BlockError::BadSignature(_) | BlockError::UnknownSigner(_) => "bad-signature",
            BlockError::DuplicateSigner(_) => "duplicate-signer",
            BlockError::BelowThreshold { .. } => "below-threshold",
        }
    }
}

/// Checks everything about `block` that does not depend on lot state.
pub fn validate_block(block: &Block, parent: &Block, authorities: &AuthoritySet) -> Result<(), BlockError> {
    let h = &block.header;
    if hash_block(h) != block.block_hash {
        return Err(BlockError::BadBlockHash);
    }
    if h.prev_hash != parent.block_hash {
        return Err(BlockError::BadLink);
    }
    let expected = parent.header.height + 1;
    if h.height != expected {
        return Err(BlockError::BadHeight { expected, got: h.height });
    }
    if h.timestamp < parent.header.timestamp {
        return Err(BlockError::BadTimestamp);
    }
    if block.transaction.is_bootstrap() {
        return Err(BlockError::MisplacedBootstrap);
    }
    match block.transaction.tx_hash() {
        Ok(d) if d == h.tx_hash => {}
        Ok(_) => return Err(BlockError::BadTxHash),
        Err(e) => return Err(BlockError::MalformedTx(e)),
    }
    if proposer_for_height(authorities, h.height) != h.proposer {
        return Err(BlockError::BadProposer(h.proposer));
    }
    let proposer = authorities.by_id(&h.proposer).ok_or(BlockError::BadProposer(h.proposer))?;
    if !proposer.public_key.verify(&h.canonical_bytes(), &block.proposer_signature) {
        return Err(BlockError::BadSignature(h.proposer));
    }
    let have = count_signers(h, &block.countersignatures, authorities).map_err(|e| match e {
        ConsensusError::DuplicateSigner(a) => BlockError::DuplicateSigner(a),
        ConsensusError::NotAuthority(a) => BlockError::UnknownSigner(a),
        ConsensusError::BadSignature(a) => BlockError::BadSignature(a),
        other => unreachable!("count_signers returned {other:?}"),
    })?;
    let need = authorities.threshold();
    if have < need {
        return Err(BlockError::BelowThreshold { have, need });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::*;
    use crate::tx::ParamValue;

    fn setup() -> (Fixture, Block, Block) {
        let fx = Fixture::new(3, 1, 1);
        let b1 = fx.seal_block(&fx.genesis, fx.inbound(&fx.producers[0], 1, &["A"], "N1"), 2);
        (fx.clone(), fx.genesis.clone(), b1)
    }

    fn code(fx: &Fixture, b: &Block, parent: &Block) -> &'static str {
        validate_block(b, parent, &fx.info.authorities).unwrap_err().code()
    }

    #[test]
    fn accepts_valid_block() {
        let (fx, g, b1) = setup();
        validate_block(&b1, &g, &fx.info.authorities).unwrap();
    }

    #[test]
    fn each_tamper_has_its_own_code() {
        let (fx, g, b1) = setup();

        let mut b = b1.clone();
        b.block_hash.0[0] ^= 1;
        assert_eq!(code(&fx, &b, &g), "bad-block-hash");

        let mut b = b1.clone();
        b.transaction.parameters.insert("note".into(), ParamValue::Str("edited".into()));
        assert_eq!(code(&fx, &b, &g), "bad-tx-hash");

        let mut b = b1.clone();
        b.transaction.input_lots.clear();
        assert_eq!(code(&fx, &b, &g), "malformed-tx");

        assert_eq!(code(&fx, &b1, &b1), "bad-link");

        let mut b = b1.clone();
        b.proposer_signature.0[3] ^= 1;
        assert_eq!(code(&fx, &b, &g), "bad-signature");

        let mut b = b1.clone();
        b.countersignatures[0].signature.0[3] ^= 1;
        assert_eq!(code(&fx, &b, &g), "bad-signature");

        let mut b = b1.clone();
        b.countersignatures.push(b.countersignatures[0]);
        assert_eq!(code(&fx, &b, &g), "duplicate-signer");

        let mut b = b1.clone();
        b.countersignatures.clear();
        assert_eq!(code(&fx, &b, &g), "below-threshold");
    }

    #[test]
    fn header_field_changes_are_caught() {
        let (fx, g, b1) = setup();
        let rehash = |mut b: Block| {
            b.block_hash = hash_block(&b.header);
            b
        };
        let mut b = b1.clone();
        b.header.height = 2;
        assert_eq!(code(&fx, &rehash(b), &g), "bad-height");

        let mut g2 = g.clone();
        g2.header.timestamp = b1.header.timestamp + 1;
        g2.block_hash = hash_block(&g2.header);
        let mut b = b1.clone();
        b.header.prev_hash = g2.block_hash;
        assert_eq!(code(&fx, &rehash(b), &g2), "bad-timestamp");

        let mut b = b1.clone();
        b.header.proposer = fx.authority_keys[1].fingerprint();
        assert_eq!(code(&fx, &rehash(b), &g), "bad-proposer");

        // A re-hashed header invalidates every signature.
        let mut b = b1;
        b.header.timestamp += 1;
        assert_eq!(code(&fx, &rehash(b), &g), "bad-signature");
    }
}
