//! In-memory block tree with a fork-choice head and lot state at that head.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use crate::block::Block;
use crate::consensus::{fork_choice_key, BlockProposal, ConsensusError};
use crate::digest::{ChainId, Digest, TxId};
use crate::genesis::{GenesisError, GenesisInfo};
use crate::traceability::{
    latest_version, trace_history, LifecycleError, LotState, ProcessTree, TraceError, TraceState, TxSource,
    DEFAULT_MAX_DEPTH,
};
use crate::tx::{LotCode, ProcessTransaction};
use crate::validate::{validate_block, BlockError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AppendError {
    #[error("parent block {0} is unknown")]
    UnknownParent(Digest),
    #[error(transparent)]
    Invalid(#[from] BlockError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
}

impl AppendError {
    pub fn code(&self) -> &'static str {
        match self {
            AppendError::UnknownParent(_) => "unknown-parent",
            AppendError::Invalid(e) => e.code(),
            AppendError::Consensus(e) => e.code(),
            AppendError::Lifecycle(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppendOutcome {
    /// Block already known; nothing changed.
    Duplicate,
    /// Block extends the previous head and is the new head.
    Extended,
    /// Block stored on a side branch; head unchanged.
    Fork,
    /// Head moved to another branch.
    Reorg,
}

/// All known valid blocks, the canonical chain selected by fork choice, and
/// the lot state at its head.
#[derive(Clone, Debug)]
pub struct ChainState {
    info: Arc<GenesisInfo>,
    blocks: HashMap<Digest, Arc<Block>>,
    tips: BTreeSet<Digest>,
    canonical: Vec<Arc<Block>>,
    trace: TraceState,
}

impl ChainState {
    pub fn new(genesis: Block) -> Result<Self, GenesisError> {
        let info = GenesisInfo::from_block(&genesis)?;
        let genesis = Arc::new(genesis);
        let mut trace = TraceState::default();
        trace.apply(&genesis);
        Ok(ChainState {
            info: Arc::new(info),
            blocks: HashMap::from([(genesis.block_hash, genesis.clone())]),
            tips: BTreeSet::from([genesis.block_hash]),
            canonical: vec![genesis],
            trace,
        })
    }

    pub fn info(&self) -> &GenesisInfo {
        &self.info
    }

    pub fn chain_id(&self) -> ChainId {
        self.info.chain_id
    }

    pub fn genesis(&self) -> &Block {
        &self.canonical[0]
    }

    pub fn head(&self) -> &Block {
        self.canonical.last().expect("chain always has genesis")
    }

    pub fn height(&self) -> u64 {
        self.head().header.height
    }

    pub fn block_at(&self, height: u64) -> Option<&Block> {
        self.canonical.get(usize::try_from(height).ok()?).map(|b| b.as_ref())
    }

    pub fn block_by_hash(&self, hash: &Digest) -> Option<&Block> {
        self.blocks.get(hash).map(|b| b.as_ref())
    }

    pub fn contains(&self, hash: &Digest) -> bool {
        self.blocks.contains_key(hash)
    }

    /// True if `hash` is on the canonical chain.
    pub fn is_canonical(&self, hash: &Digest) -> bool {
        self.blocks.get(hash).is_some_and(|b| self.block_at(b.header.height).is_some_and(|c| c.block_hash == *hash))
    }

    /// Canonical blocks with heights in `from..=to` (clamped to the head).
    pub fn range(&self, from: u64, to: u64) -> impl Iterator<Item = &Block> {
        let end = to.min(self.height());
        (from..=end).filter_map(move |h| self.block_at(h))
    }

    pub fn canonical_blocks(&self) -> impl Iterator<Item = &Block> {
        self.canonical.iter().map(|b| b.as_ref())
    }

    /// Hashes of every branch tip, canonical head included.
    pub fn tips(&self) -> impl Iterator<Item = &Digest> {
        self.tips.iter()
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn trace(&self) -> &TraceState {
        &self.trace
    }

    pub fn lot_state(&self, lot: &LotCode) -> Option<&LotState> {
        self.trace.lot(lot)
    }

    /// Committed transaction and its block height.
    pub fn tx_by_id(&self, id: &TxId) -> Option<(u64, &ProcessTransaction)> {
        let h = *self.trace.index.by_tx.get(id)?;
        Some((h, &self.block_at(h)?.transaction))
    }

    pub fn latest_version(&self, id: &TxId) -> Result<&ProcessTransaction, TraceError> {
        latest_version(id, &self.trace.index, self)
    }

    pub fn trace_history(&self, lot: &LotCode) -> Result<ProcessTree, TraceError> {
        self.trace.trace(lot, self, DEFAULT_MAX_DEPTH)
    }

    /// Lifecycle check of `tx` against the head state.
    pub fn check_transaction(&self, tx: &ProcessTransaction) -> Result<(), LifecycleError> {
        self.trace.validate(tx, &self.info.actors)
    }

    /// Checks a proposal that claims to extend the current head.
    pub fn check_proposal(&self, proposal: &BlockProposal) -> Result<(), AppendError> {
        let head = self.head();
        let h = &proposal.header;
        if h.prev_hash != head.block_hash {
            return Err(BlockError::BadLink.into());
        }
        if h.height != head.header.height + 1 {
            return Err(BlockError::BadHeight { expected: head.header.height + 1, got: h.height }.into());
        }
        if h.timestamp < head.header.timestamp {
            return Err(BlockError::BadTimestamp.into());
        }
        proposal.verify(&self.info.authorities)?;
        self.check_transaction(&proposal.transaction)?;
        Ok(())
    }

    fn key(b: &Block) -> (u64, usize, std::cmp::Reverse<Digest>) {
        fork_choice_key(b.header.height, b.signature_count(), b.block_hash)
    }

    /// Validates and inserts a block, then re-runs fork choice.
    pub fn append(&mut self, block: Block) -> Result<AppendOutcome, AppendError> {
        if self.blocks.contains_key(&block.block_hash) {
            return Ok(AppendOutcome::Duplicate);
        }
        let parent = self
            .blocks
            .get(&block.header.prev_hash)
            .cloned()
            .ok_or(AppendError::UnknownParent(block.header.prev_hash))?;
        validate_block(&block, &parent, &self.info.authorities)?;
        let extends_head = parent.block_hash == self.head().block_hash;
        if extends_head {
            self.check_transaction(&block.transaction)?;
        } else {
            self.state_at(&parent).validate(&block.transaction, &self.info.actors)?;
        }

        let block = Arc::new(block);
        self.blocks.insert(block.block_hash, block.clone());
        self.tips.remove(&parent.block_hash);
        self.tips.insert(block.block_hash);

        let best = *self.tips.iter().max_by_key(|h| Self::key(&self.blocks[*h])).expect("at least one tip");
        if best == self.head().block_hash {
            return Ok(AppendOutcome::Fork);
        }
        if extends_head && best == block.block_hash {
            self.trace.apply(&block);
            self.canonical.push(block);
            return Ok(AppendOutcome::Extended);
        }
        self.canonical = self.branch(&best);
        let mut trace = TraceState::default();
        for b in &self.canonical {
            trace.apply(b);
        }
        self.trace = trace;
        Ok(AppendOutcome::Reorg)
    }

    /// Blocks from genesis to `tip`, following parent links.
    fn branch(&self, tip: &Digest) -> Vec<Arc<Block>> {
        let mut out = Vec::new();
        let mut cur = self.blocks.get(tip).cloned();
        while let Some(b) = cur {
            cur = if b.header.height == 0 { None } else { self.blocks.get(&b.header.prev_hash).cloned() };
            out.push(b);
        }
        out.reverse();
        out
    }

    fn state_at(&self, tip: &Block) -> TraceState {
        let mut st = TraceState::default();
        for b in self.branch(&tip.block_hash) {
            st.apply(&b);
        }
        st
    }
}

impl TxSource for ChainState {
    fn tx_at_height(&self, height: u64) -> Option<&ProcessTransaction> {
        self.block_at(height).map(|b| &b.transaction)
    }
}

impl TraceState {
    /// Process tree for `lot` using `chain` to resolve transactions.
    pub fn trace<S: TxSource + ?Sized>(
        &self,
        lot: &LotCode,
        chain: &S,
        max_depth: usize,
    ) -> Result<ProcessTree, TraceError> {
        trace_history(lot, &self.index, chain, max_depth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::*;

    #[test]
    fn append_extends_and_ignores_duplicates() {
        let fx = Fixture::new(3, 1, 1);
        let mut chain = fx.chain();
        let b1 = fx.seal_block(chain.head(), fx.inbound(&fx.producers[0], 1, &["A"], "N1"), 5);
        assert_eq!(chain.append(b1.clone()), Ok(AppendOutcome::Extended));
        assert_eq!(chain.append(b1.clone()), Ok(AppendOutcome::Duplicate));
        assert_eq!(chain.height(), 1);
        assert_eq!(chain.tx_by_id(&b1.transaction.tx_id).map(|(h, _)| h), Some(1));
    }

    #[test]
    fn unknown_parent_and_lifecycle_rejections() {
        let fx = Fixture::new(3, 1, 1);
        let mut chain = fx.chain();
        let mut orphan = fx.seal_block(chain.head(), fx.inbound(&fx.producers[0], 1, &["A"], "N1"), 5);
        orphan.header.prev_hash = Digest::of(b"nowhere");
        assert_eq!(chain.append(orphan).unwrap_err().code(), "unknown-parent");
        let bad = fx.seal_block(chain.head(), fx.production(&fx.producers[0], 2, &["Z"], "Y"), 5);
        assert_eq!(chain.append(bad).unwrap_err().code(), "unknown-input-lot");
        assert_eq!(chain.height(), 0);
    }

    #[test]
    fn competing_blocks_pick_same_head_in_any_order() {
        let fx = Fixture::new(3, 1, 1);
        let chain0 = fx.chain();
        let a = fx.seal_block(chain0.head(), fx.inbound(&fx.producers[0], 1, &["A"], "N1"), 5);
        let b = fx.seal_block(chain0.head(), fx.inbound(&fx.producers[0], 2, &["B"], "N2"), 5);
        let want = a.block_hash.min(b.block_hash);
        for order in [[&a, &b], [&b, &a]] {
            let mut c = chain0.clone();
            for blk in order {
                c.append(blk.clone()).unwrap();
            }
            assert_eq!(c.head().block_hash, want);
            assert_eq!(c.tips().count(), 2);
        }
    }

    #[test]
    fn longer_fork_triggers_reorg_and_rebuilds_lot_state() {
        let fx = Fixture::new(3, 1, 1);
        let p = &fx.producers[0];
        let mut chain = fx.chain();
        let g = chain.genesis().clone();
        let a1 = fx.seal_block(&g, fx.inbound(p, 1, &["A"], "N1"), 5);
        chain.append(a1).unwrap();
        let b1 = fx.seal_block(&g, fx.inbound(p, 2, &["B"], "N2"), 5);
        let b2 = fx.seal_block(&b1, fx.production(p, 3, &["B"], "C"), 6);
        // Whichever height-1 block wins the tie, moving to b2 requires a reorg.
        let outcomes = [chain.append(b1).unwrap(), chain.append(b2.clone()).unwrap()];
        assert!(outcomes.contains(&AppendOutcome::Reorg));
        assert_eq!(chain.head().block_hash, b2.block_hash);
        assert!(chain.lot_state(&lot("A")).is_none());
        assert!(chain.lot_state(&lot("C")).is_some());
    }

    #[test]
    fn check_proposal_requires_head_link() {
        let fx = Fixture::new(3, 1, 1);
        let chain = fx.chain();
        let p = fx.propose(chain.head(), fx.inbound(&fx.producers[0], 1, &["A"], "N1"), 3);
        chain.check_proposal(&p).unwrap();
        let mut q = p.clone();
        q.header.height = 5;
        assert_eq!(chain.check_proposal(&q).unwrap_err().code(), "bad-height");
    }
}
