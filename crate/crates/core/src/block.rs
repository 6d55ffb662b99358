//! Blocks: a fixed-size header committing to exactly one transaction.

use serde::{Deserialize, Serialize};

use crate::codec::{DecodeError, Reader, Writer};
use crate::digest::Digest;
use crate::keys::{AuthorityId, Fingerprint, Signature};
use crate::tx::{ProcessTransaction, ShapeError};

/// Length of the canonical header encoding.
pub const HEADER_LEN: usize = 1 + 8 + 32 + 8 + 8 + 32;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct BlockHeader {
    pub height: u64,
    pub prev_hash: Digest,
    pub timestamp: u64,
    pub proposer: AuthorityId,
    pub tx_hash: Digest,
}

impl BlockHeader {
    /// Canonical header bytes; these are what the block hash and every
    /// authority signature cover.
    pub fn canonical_bytes(&self) -> [u8; HEADER_LEN] {
        let mut w = Writer::with_version();
        w.u64(self.height);
        w.fixed(&self.prev_hash.0);
        w.u64(self.timestamp);
        w.fixed(&self.proposer.0);
        w.fixed(&self.tx_hash.0);
        let bytes = w.finish();
        let mut out = [0u8; HEADER_LEN];
        out.copy_from_slice(&bytes);
        out
    }

    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let h = Self::read(&mut r)?;
        r.finish()?;
        Ok(h)
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_version()?;
        Ok(BlockHeader {
            height: r.u64()?,
            prev_hash: Digest(r.array()?),
            timestamp: r.u64()?,
            proposer: Fingerprint(r.array()?),
            tx_hash: Digest(r.array()?),
        })
    }
}

/// SHA-256 of the canonical header bytes.
pub fn hash_block(header: &BlockHeader) -> Digest {
    Digest::of(&header.canonical_bytes())
}

/// An authority's signature over a header.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Countersignature {
    pub authority: AuthorityId,
    pub signature: Signature,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Block {
    pub header: BlockHeader,
    pub transaction: ProcessTransaction,
    pub proposer_signature: Signature,
    pub countersignatures: Vec<Countersignature>,
    pub block_hash: Digest,
}

impl Block {
    pub fn height(&self) -> u64 {
        self.header.height
    }

    pub fn hash(&self) -> Digest {
        self.block_hash
    }

    /// Number of distinct authority signatures (proposer included).
    pub fn signature_count(&self) -> usize {
        1 + self.countersignatures.len()
    }

    /// Canonical block bytes used for storage and the wire:
    /// version, header, length-prefixed transaction, proposer signature,
    /// countersignature list, block hash.
    pub fn canonical_bytes(&self) -> Result<Vec<u8>, ShapeError> {
        let tx = self.transaction.canonical_bytes()?;
        let mut w = Writer::with_version();
        w.fixed(&self.header.canonical_bytes());
        w.blob(&tx);
        w.fixed(&self.proposer_signature.0);
        w.count(self.countersignatures.len());
        for c in &self.countersignatures {
            w.fixed(&c.authority.0);
            w.fixed(&c.signature.0);
        }
        w.fixed(&self.block_hash.0);
        Ok(w.finish())
    }

    /// Decodes a block. Does not check hashes or signatures; see
    /// [`Block::verify_integrity`] and `validate_block`.
    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        r.expect_version()?;
        let header = BlockHeader::read(&mut r)?;
        let tx_bytes = r.blob()?;
        let transaction = ProcessTransaction::from_canonical_bytes(tx_bytes)?;
        let proposer_signature = Signature(r.array()?);
        let n = r.count(72)?;
        let mut countersignatures = Vec::with_capacity(n);
        for _ in 0..n {
            countersignatures
                .push(Countersignature { authority: Fingerprint(r.array()?), signature: Signature(r.array()?) });
        }
        let block_hash = Digest(r.array()?);
        r.finish()?;
        Ok(Block { header, transaction, proposer_signature, countersignatures, block_hash })
    }

    /// Hash-level self-consistency: header hash and transaction hash.
    pub fn verify_integrity(&self) -> Result<(), IntegrityError> {
        if hash_block(&self.header) != self.block_hash {
            return Err(IntegrityError::BlockHash);
        }
        match self.transaction.tx_hash() {
            Ok(h) if h == self.header.tx_hash => Ok(()),
            _ => Err(IntegrityError::TxHash),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum IntegrityError {
    #[error("block hash does not match header")]
    BlockHash,
    #[error("transaction hash does not match header")]
    TxHash,
}
