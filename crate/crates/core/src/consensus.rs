//! Proof-of-authority consensus.
//!
//! Authorities take turns proposing in a fixed round-robin order. A proposal
//! becomes a block once `floor(N/2) + 1` distinct authorities (the proposer
//! included) have signed its header.

use std::cmp::Reverse;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::block::{hash_block, Block, BlockHeader, Countersignature};
use crate::digest::Digest;
use crate::keys::{AuthorityId, PublicKey, Signature, SigningKey};
use crate::tx::{ProcessTransaction, ShapeError};

/// Fewest authorities a deployment may run with.
pub const MIN_AUTHORITIES: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Authority {
    pub id: AuthorityId,
    pub public_key: PublicKey,
    pub endpoint: String,
}

/// The static, ordered validator set fixed at genesis.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AuthoritySet {
    authorities: Vec<Authority>,
    epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AuthoritySetError {
    #[error("authority set needs at least {MIN_AUTHORITIES} members, got {0}")]
    TooFew(usize),
    #[error("authority {0} listed twice")]
    Duplicate(AuthorityId),
}

impl AuthoritySet {
    pub fn new(authorities: Vec<Authority>) -> Result<Self, AuthoritySetError> {
        if authorities.len() < MIN_AUTHORITIES {
            return Err(AuthoritySetError::TooFew(authorities.len()));
        }
        let mut seen = BTreeSet::new();
        for a in &authorities {
            if !seen.insert(a.id) {
                return Err(AuthoritySetError::Duplicate(a.id));
            }
        }
        Ok(AuthoritySet { authorities, epoch: 0 })
    }

    pub fn len(&self) -> usize {
        self.authorities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.authorities.is_empty()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn get(&self, index: usize) -> Option<&Authority> {
        self.authorities.get(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Authority> {
        self.authorities.iter()
    }

    pub fn by_id(&self, id: &AuthorityId) -> Option<&Authority> {
        self.authorities.iter().find(|a| a.id == *id)
    }

    pub fn contains(&self, id: &AuthorityId) -> bool {
        self.by_id(id).is_some()
    }

    /// Distinct signatures needed to finalize a block: `floor(N/2) + 1`.
    pub fn threshold(&self) -> usize {
        self.len() / 2 + 1
    }
}

/// Scheduled proposer for `height` (heights start at 1 after genesis).
pub fn proposer_for_height(authorities: &AuthoritySet, height: u64) -> AuthorityId {
    let n = authorities.len() as u64;
    let idx = (height.max(1) - 1) % n;
    authorities.authorities[idx as usize].id
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConsensusError {
    #[error("not this authority's turn: height {height} belongs to {expected}")]
    NotMyTurn { height: u64, expected: AuthorityId },
    #[error("{0} is not an authority")]
    NotAuthority(AuthorityId),
    #[error("proposer cannot countersign its own proposal")]
    SelfCountersign,
    #[error("authority {0} signed twice")]
    DuplicateSigner(AuthorityId),
    #[error("{have} signatures, {need} required")]
    BelowThreshold { have: usize, need: usize },
    #[error("signature from {0} does not verify")]
    BadSignature(AuthorityId),
    #[error("proposer {got} is not scheduled for height {height}")]
    BadProposer { height: u64, got: AuthorityId },
    #[error("proposal hashes are inconsistent")]
    BadHash,
    #[error("invalid transaction: {0}")]
    InvalidTx(#[from] ShapeError),
}

impl ConsensusError {
    pub fn code(&self) -> &'static str {
        match self {
            ConsensusError::NotMyTurn { .. } => "not-my-turn",
            ConsensusError::NotAuthority(_) => "not-authority",
            ConsensusError::SelfCountersign => "self-countersign",
            ConsensusError::DuplicateSigner(_) => "duplicate-signer",
            ConsensusError::BelowThreshold { .. } => "below-threshold",
            ConsensusError::BadSignature(_) => "bad-signature",
            ConsensusError::BadProposer { .. } => "bad-proposer",
            ConsensusError::BadHash => "bad-tx-hash",
            ConsensusError::InvalidTx(e) => e.code(),
        }
    }
}

/// A block that has its proposer signature but no countersignatures yet.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct BlockProposal {
    pub header: BlockHeader,
    pub transaction: ProcessTransaction,
    pub proposer_signature: Signature,
}

impl BlockProposal {
    pub fn block_hash(&self) -> Digest {
        hash_block(&self.header)
    }

    pub fn height(&self) -> u64 {
        self.header.height
    }

    /// Checks schedule, transaction hash and proposer signature.
    pub fn verify(&self, authorities: &AuthoritySet) -> Result<(), ConsensusError> {
        let h = &self.header;
        if proposer_for_height(authorities, h.height) != h.proposer || h.height == 0 {
            return Err(ConsensusError::BadProposer { height: h.height, got: h.proposer });
        }
        if self.transaction.tx_hash()? != h.tx_hash {
            return Err(ConsensusError::BadHash);
        }
        let key = &authorities.by_id(&h.proposer).ok_or(ConsensusError::NotAuthority(h.proposer))?.public_key;
        if !key.verify(&h.canonical_bytes(), &self.proposer_signature) {
            return Err(ConsensusError::BadSignature(h.proposer));
        }
        Ok(())
    }

    pub fn into_block(self, countersignatures: Vec<Countersignature>) -> Block {
        Block {
            block_hash: hash_block(&self.header),
            header: self.header,
            transaction: self.transaction,
            proposer_signature: self.proposer_signature,
            countersignatures,
        }
    }
}

/// A countersigning authority's signature over a proposal header.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct SignatureShare {
    pub block_hash: Digest,
    pub authority: AuthorityId,
    pub signature: Signature,
}

/// Builds and signs the next block over `head`.
///
/// The caller is responsible for having checked the transaction's lot
/// lifecycle against the state at `head`.
pub fn propose_block(
    pending: ProcessTransaction,
    head: &Block,
    key: &SigningKey,
    authorities: &AuthoritySet,
    timestamp: u64,
) -> Result<BlockProposal, ConsensusError> {
    let height = head.header.height + 1;
    let expected = proposer_for_height(authorities, height);
    if key.fingerprint() != expected {
        return Err(ConsensusError::NotMyTurn { height, expected });
    }
    let tx_hash = pending.tx_hash()?;
    let header = BlockHeader {
        height,
        prev_hash: head.block_hash,
        timestamp: timestamp.max(head.header.timestamp),
        proposer: expected,
        tx_hash,
    };
    let proposer_signature = key.sign(&header.canonical_bytes());
    Ok(BlockProposal { header, transaction: pending, proposer_signature })
}

/// Countersigns a structurally valid proposal.
pub fn countersign(
    proposal: &BlockProposal,
    key: &SigningKey,
    authorities: &AuthoritySet,
) -> Result<SignatureShare, ConsensusError> {
    let me = key.fingerprint();
    if !authorities.contains(&me) {
        return Err(ConsensusError::NotAuthority(me));
    }
    if proposal.header.proposer == me {
        return Err(ConsensusError::SelfCountersign);
    }
    proposal.verify(authorities)?;
    Ok(SignatureShare {
        block_hash: proposal.block_hash(),
        authority: me,
        signature: key.sign(&proposal.header.canonical_bytes()),
    })
}

/// Verifies `countersignatures` against `header` and returns the number of
/// distinct valid signers, proposer included.
pub(crate) fn count_signers(
    header: &BlockHeader,
    countersignatures: &[Countersignature],
    authorities: &AuthoritySet,
) -> Result<usize, ConsensusError> {
    let msg = header.canonical_bytes();
    let mut seen = BTreeSet::from([header.proposer]);
    for c in countersignatures {
        let a = authorities.by_id(&c.authority).ok_or(ConsensusError::NotAuthority(c.authority))?;
        if !seen.insert(c.authority) {
            return Err(ConsensusError::DuplicateSigner(c.authority));
        }
        if !a.public_key.verify(&msg, &c.signature) {
            return Err(ConsensusError::BadSignature(c.authority));
        }
    }
    Ok(seen.len())
}

/// Attaches shares to a proposal once the signing threshold is met.
pub fn finalize(
    proposal: BlockProposal,
    shares: &[SignatureShare],
    authorities: &AuthoritySet,
) -> Result<Block, ConsensusError> {
    let mut countersignatures: Vec<Countersignature> =
        shares.iter().map(|s| Countersignature { authority: s.authority, signature: s.signature }).collect();
    let have = count_signers(&proposal.header, &countersignatures, authorities)?;
    let need = authorities.threshold();
    if have < need {
        return Err(ConsensusError::BelowThreshold { have, need });
    }
    countersignatures.sort_by_key(|c| c.authority);
    Ok(proposal.into_block(countersignatures))
}

/// Deterministic head selection: highest block, then most signatures, then
/// the lexicographically smallest hash.
pub fn fork_choice(heads: &[Block]) -> &Block {
    heads
        .iter()
        .max_by_key(|b| (b.header.height, b.signature_count(), Reverse(b.block_hash)))
        .expect("fork_choice requires at least one head")
}

/// Same ordering as [`fork_choice`] over `(height, signatures, hash)` keys.
pub fn fork_choice_key(height: u64, signatures: usize, hash: Digest) -> (u64, usize, Reverse<Digest>) {
    (height, signatures, Reverse(hash))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genesis::{make_genesis, AuthorityEntry, GenesisConfig, GenesisInfo};
    use crate::testkit::*;

    fn set(n: usize) -> (AuthoritySet, Vec<SigningKey>) {
        let keys: Vec<_> = (0..n).map(|i| SigningKey::from_seed([i as u8 + 10; 32])).collect();
        let cfg = GenesisConfig {
            chain_name: "c".into(),
            timestamp: 0,
            authorities: keys
                .iter()
                .map(|k| AuthorityEntry { public_key: k.public_key(), endpoint: String::new() })
                .collect(),
            actors: vec![],
            policy: None,
        };
        let g = make_genesis(&cfg).unwrap();
        (GenesisInfo::from_block(&g).unwrap().authorities, keys)
    }

    #[test]
    fn schedule_round_robin() {
        let (a, _) = set(3);
        assert_eq!(proposer_for_height(&a, 1), a.get(0).unwrap().id);
        assert_eq!(proposer_for_height(&a, 2), a.get(1).unwrap().id);
        assert_eq!(proposer_for_height(&a, 4), a.get(0).unwrap().id);
    }

    #[test]
    fn schedule_counts_over_ten_heights() {
        let (a, _) = set(5);
        // Brute-force count over the schedule.
        let mut counts = std::collections::BTreeMap::new();
        for h in 1..=10 {
            *counts.entry(proposer_for_height(&a, h)).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 5);
        assert!(counts.values().all(|&c| c == 2));
    }

    #[test]
    fn thresholds() {
        for (n, t) in [(3, 2), (4, 3), (5, 3), (6, 4), (7, 4)] {
            assert_eq!(set(n).0.threshold(), t, "n={n}");
        }
    }

    #[test]
    fn propose_countersign_finalize() {
        let (a, keys) = set(3);
        let genesis = genesis_block_for(&keys);
        let tx = inbound_tx(1, "A");
        let p = propose_block(tx.clone(), &genesis, &keys[0], &a, 10).unwrap();
        p.verify(&a).unwrap();
        assert_eq!(
            propose_block(tx, &genesis, &keys[1], &a, 10),
            Err(ConsensusError::NotMyTurn { height: 1, expected: keys[0].fingerprint() })
        );
        assert_eq!(countersign(&p, &keys[0], &a), Err(ConsensusError::SelfCountersign));
        let outsider = SigningKey::from_seed([200; 32]);
        assert_eq!(countersign(&p, &outsider, &a), Err(ConsensusError::NotAuthority(outsider.fingerprint())));
        let share = countersign(&p, &keys[1], &a).unwrap();
        assert!(keys[1].public_key().verify(&p.header.canonical_bytes(), &share.signature));

        assert_eq!(finalize(p.clone(), &[], &a), Err(ConsensusError::BelowThreshold { have: 1, need: 2 }));
        assert_eq!(
            finalize(p.clone(), &[share, share], &a),
            Err(ConsensusError::DuplicateSigner(keys[1].fingerprint()))
        );
        let block = finalize(p, &[share], &a).unwrap();
        assert_eq!(block.signature_count(), 2);
    }

    #[test]
    fn n4_needs_three() {
        let (a, keys) = set(4);
        let genesis = genesis_block_for(&keys);
        let p = propose_block(inbound_tx(1, "A"), &genesis, &keys[0], &a, 1).unwrap();
        let s1 = countersign(&p, &keys[1], &a).unwrap();
        let s2 = countersign(&p, &keys[2], &a).unwrap();
        assert!(matches!(finalize(p.clone(), &[s1], &a), Err(ConsensusError::BelowThreshold { have: 2, need: 3 })));
        assert!(finalize(p, &[s1, s2], &a).is_ok());
    }

    #[test]
    fn share_for_other_header_fails_when_attached() {
        let (a, keys) = set(3);
        let genesis = genesis_block_for(&keys);
        let pa = propose_block(inbound_tx(1, "A"), &genesis, &keys[0], &a, 1).unwrap();
        let pb = propose_block(inbound_tx(2, "B"), &genesis, &keys[0], &a, 1).unwrap();
        let share_a = countersign(&pa, &keys[1], &a).unwrap();
        assert_eq!(finalize(pb, &[share_a], &a), Err(ConsensusError::BadSignature(keys[1].fingerprint())));
    }

    #[test]
    fn fork_choice_rules() {
        let (a, keys) = set(3);
        let genesis = genesis_block_for(&keys);
        let mk = |seed: u8, sigs: usize| {
            let p = propose_block(inbound_tx(seed, "A"), &genesis, &keys[0], &a, 1).unwrap();
            let shares: Vec<_> = keys[1..=sigs].iter().map(|k| countersign(&p, k, &a).unwrap()).collect();
            finalize(p, &shares, &a).unwrap()
        };
        let two = mk(1, 1);
        let three = mk(2, 2);
        assert_eq!(fork_choice(&[two.clone(), three.clone()]).block_hash, three.block_hash);

        // Equal height and signatures: smallest hash, for every permutation.
        let heads = [mk(3, 1), mk(4, 1), mk(5, 1)];
        let expected = heads.iter().map(|b| b.block_hash).min().unwrap();
        for perm in [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            let v: Vec<Block> = perm.iter().map(|&i| heads[i].clone()).collect();
            assert_eq!(fork_choice(&v).block_hash, expected);
        }
    }
}
