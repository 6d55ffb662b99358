//! Node state machine.
//!
//! [`Node`] performs no I/O. Callers feed it peer messages, timer ticks and
//! local submissions together with the current time, then drain the
//! resulting [`Action`]s and deliver them. The same machine runs under the
//! TCP runtime and the deterministic simulator.

use std::collections::{BTreeMap, HashSet, VecDeque};

use biotrak_core::{
    countersign, finalize, propose_block, proposer_for_height, AppendError, AppendOutcome, Block, BlockProposal,
    ChainState, Digest, Fingerprint, LifecycleError, ProcessTransaction, ShapeError, SignatureShare, SigningKey, TxId,
    MIN_AUTHORITIES,
};
use biotrak_store::{BlockStore, StoreError};

use crate::session::{handshake, PeerSession};
use crate::sync::{next_window, SYNC_ATTEMPTS};
use crate::wire::{Hello, Mode, TxSubmit, WireMessage};

/// Byte budget for one `BlockResponse`.
const RESPONSE_BUDGET: usize = 8 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PeerId(pub u64);

/// Timer settings, all in milliseconds.
#[derive(Debug, Clone, Copy)]
pub struct Timing {
    pub heartbeat: u64,
    /// A peer not heard from for this long counts as unreachable.
    pub liveness: u64,
    pub request_timeout: u64,
    pub proposal_retry: u64,
    pub forward: u64,
    /// How long a countersignature binds this node to one header per height.
    pub lock: u64,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            heartbeat: 1000,
            liveness: 3500,
            request_timeout: 1500,
            proposal_retry: 400,
            forward: 1000,
            lock: 30_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NodeConfig {
    pub mode: Mode,
    /// Node identity; in authoritative mode the authority signing key.
    pub key: SigningKey,
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[allow(clippy::large_enum_variant)]
pub enum Action {
    Send { to: PeerId, msg: WireMessage },
    Disconnect { peer: PeerId, code: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubmitStatus {
    /// Handed to the scheduled proposer.
    Accepted,
    /// The proposer is unreachable; held by the authorities until it returns.
    Queued,
}

impl SubmitStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SubmitStatus::Accepted => "accepted",
            SubmitStatus::Queued => "queued",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubmitReceipt {
    pub tx_id: TxId,
    pub status: SubmitStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SubmitError {
    #[error("this node does not accept writes")]
    NotAuthoritative,
    #[error("malformed transaction: {0}")]
    Malformed(#[from] ShapeError),
    #[error("transaction rejected: {0}")]
    Rejected(#[from] LifecycleError),
}

impl SubmitError {
    pub fn code(&self) -> &'static str {
        match self {
            SubmitError::NotAuthoritative => "not-authoritative",
            SubmitError::Malformed(e) => e.code(),
            SubmitError::Rejected(e) => e.code(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum NodeError {
    #[error("key {0} is not in the authority set")]
    NotAnAuthority(Fingerprint),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl NodeError {
    pub fn code(&self) -> &'static str {
        match self {
            NodeError::NotAnAuthority(_) => "not-an-authority",
            NodeError::Store(e) => e.code(),
        }
    }
}

/// Counters kept for diagnostics and harness assertions.
#[derive(Debug, Clone, Default)]
pub struct NodeStats {
    pub proposals_sent: u64,
    pub shares_sent: u64,
    pub announces_sent: u64,
    pub blocks_finalized: u64,
    pub invalid_blocks: u64,
    pub quarantined: u64,
    pub store_errors: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerInfo {
    pub peer: PeerId,
    pub session: Option<PeerSession>,
    pub quarantined: bool,
}

#[derive(Debug)]
struct Peer {
    session: Option<PeerSession>,
    last_seen: u64,
    quarantined: bool,
}

#[derive(Debug)]
struct Request {
    peer: PeerId,
    from: u64,
    to: u64,
    deadline: u64,
    attempts: u32,
}

#[derive(Debug)]
struct Pending {
    proposal: BlockProposal,
    hash: Digest,
    shares: BTreeMap<Fingerprint, SignatureShare>,
    last_sent: u64,
}

#[derive(Debug)]
pub struct Node {
    config: NodeConfig,
    chain: ChainState,
    store: Option<BlockStore>,
    peers: BTreeMap<PeerId, Peer>,
    mempool: VecDeque<ProcessTransaction>,
    mempool_ids: HashSet<TxId>,
    pending: Option<Pending>,
    locks: BTreeMap<u64, (Digest, u64)>,
    request: Option<Request>,
    degraded: bool,
    last_heartbeat: Option<u64>,
    last_forward: u64,
    outbox: Vec<Action>,
    stats: NodeStats,
}

impl Node {
    pub fn new(config: NodeConfig, chain: ChainState, store: Option<BlockStore>) -> Result<Self, NodeError> {
        let me = config.key.fingerprint();
        if config.mode == Mode::Authoritative
            && !chain.info().authorities.by_id(&me).is_some_and(|a| a.public_key == config.key.public_key())
        {
            return Err(NodeError::NotAnAuthority(me));
        }
        let mut node = Node {
            config,
            chain,
            store,
            peers: BTreeMap::new(),
            mempool: VecDeque::new(),
            mempool_ids: HashSet::new(),
            pending: None,
            locks: BTreeMap::new(),
            request: None,
            degraded: false,
            last_heartbeat: None,
            last_forward: 0,
            outbox: Vec::new(),
            stats: NodeStats::default(),
        };
        if let Some(store) = node.store.as_mut() {
            store.persist_chain(&node.chain)?;
        }
        Ok(node)
    }

    /// Opens a node from its store directory, seeding an empty store with
    /// `genesis`.
    pub fn open(config: NodeConfig, genesis: Block, store: BlockStore) -> Result<Self, NodeError> {
        let chain = match store.load_chain()? {
            Some(chain) => chain,
            None => ChainState::new(genesis).map_err(StoreError::from)?,
        };
        Node::new(config, chain, Some(store))
    }

    pub fn chain(&self) -> &ChainState {
        &self.chain
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn id(&self) -> Fingerprint {
        self.config.key.fingerprint()
    }

    pub fn is_degraded(&self) -> bool {
        self.degraded
    }

    pub fn stats(&self) -> &NodeStats {
        &self.stats
    }

    pub fn mempool_len(&self) -> usize {
        self.mempool.len()
    }

    pub fn store(&self) -> Option<&BlockStore> {
        self.store.as_ref()
    }

    pub fn peers(&self) -> Vec<PeerInfo> {
        self.peers
            .iter()
            .map(|(id, p)| PeerInfo { peer: *id, session: p.session.clone(), quarantined: p.quarantined })
            .collect()
    }

    pub fn drain(&mut self) -> Vec<Action> {
        std::mem::take(&mut self.outbox)
    }

    fn is_authority(&self) -> bool {
        self.config.mode == Mode::Authoritative
    }

    fn send(&mut self, to: PeerId, msg: WireMessage) {
        match &msg {
            WireMessage::Proposal(_) => self.stats.proposals_sent += 1,
            WireMessage::Share { .. } => self.stats.shares_sent += 1,
            WireMessage::BlockAnnounce(_) => self.stats.announces_sent += 1,
            _ => {}
        }
        self.outbox.push(Action::Send { to, msg });
    }

    fn hello(&self, now: u64) -> WireMessage {
        let info = self.chain.info();
        WireMessage::Hello(Hello::new(
            &self.config.key,
            info.chain_id,
            self.config.mode,
            self.chain.height(),
            now / 1000,
        ))
    }

    fn live_sessions(&self, now: u64) -> impl Iterator<Item = (PeerId, &PeerSession)> + '_ {
        let liveness = self.config.timing.liveness;
        self.peers.iter().filter_map(move |(id, p)| {
            let s = p.session.as_ref()?;
            (!p.quarantined && now.saturating_sub(p.last_seen) <= liveness).then_some((*id, s))
        })
    }

    fn authority_peers(&self, now: u64) -> Vec<(PeerId, Fingerprint)> {
        self.live_sessions(now).filter(|(_, s)| s.mode == Mode::Authoritative).map(|(id, s)| (id, s.peer_id)).collect()
    }

    fn quarantine(&mut self, peer: PeerId, code: &'static str) {
        if let Some(p) = self.peers.get_mut(&peer) {
            if !p.quarantined {
                tracing::warn!(peer = peer.0, code, "quarantining peer");
                p.quarantined = true;
                self.stats.quarantined += 1;
                self.outbox.push(Action::Disconnect { peer, code });
            }
        }
        if self.request.as_ref().is_some_and(|r| r.peer == peer) {
            self.request = None;
        }
    }

    /// A transport-level connection to `peer` is up.
    pub fn connected(&mut self, peer: PeerId, now: u64) {
        self.peers.insert(peer, Peer { session: None, last_seen: now, quarantined: false });
        let hello = self.hello(now);
        self.send(peer, hello);
    }

    pub fn disconnected(&mut self, peer: PeerId) {
        self.peers.remove(&peer);
        if self.request.as_ref().is_some_and(|r| r.peer == peer) {
            self.request = None;
        }
    }

    pub fn handle(&mut self, peer: PeerId, msg: WireMessage, now: u64) {
        let p = self.peers.entry(peer).or_insert(Peer { session: None, last_seen: now, quarantined: false });
        if p.quarantined {
            return;
        }
        if let WireMessage::Hello(hello) = msg {
            let info = self.chain.info();
            match handshake(info.chain_id, &info.authorities, &hello, now / 1000) {
                Ok(session) => {
                    let p = self.peers.get_mut(&peer).expect("peer registered");
                    p.session = Some(session);
                    p.last_seen = now;
                    self.maybe_sync(now);
                }
                Err(e) => self.quarantine(peer, e.code()),
            }
            return;
        }
        let p = self.peers.get_mut(&peer).expect("peer registered");
        let Some(session) = p.session.as_ref() else { return };
        let mode = session.mode;
        p.last_seen = now;
        match msg {
            WireMessage::Hello(_) => unreachable!("handled above"),
            WireMessage::BlockAnnounce(block) => {
                self.receive_block(peer, block, now);
                self.maybe_sync(now);
            }
            WireMessage::BlockRequest { from_height, to_height } => self.serve_request(peer, from_height, to_height),
            WireMessage::BlockResponse(blocks) => {
                if self.request.as_ref().is_some_and(|r| r.peer == peer) {
                    self.request = None;
                }
                for b in blocks {
                    if !self.receive_block(peer, b, now) {
                        break;
                    }
                }
                self.maybe_sync(now);
            }
            WireMessage::TxSubmit(s) => self.receive_submit(s),
            WireMessage::Proposal(p) if mode == Mode::Authoritative => self.receive_proposal(peer, p, now),
            WireMessage::Share { height, share } => self.receive_share(height, share, now),
            WireMessage::Proposal(_) => {}
        }
    }

    /// Validates and appends a block from `peer`. Returns false when the
    /// block could not be used.
    fn receive_block(&mut self, peer: PeerId, block: Block, now: u64) -> bool {
        let height = block.height();
        match self.chain.append(block.clone()) {
            Ok(AppendOutcome::Duplicate) => true,
            Ok(outcome) => {
                self.after_append(&block, outcome, now);
                true
            }
            Err(AppendError::UnknownParent(_)) => {
                if let Some(s) = self.peers.get_mut(&peer).and_then(|p| p.session.as_mut()) {
                    s.head_height = s.head_height.max(height);
                }
                false
            }
            Err(e) => {
                tracing::warn!(peer = peer.0, height, code = e.code(), "peer sent an invalid block");
                self.stats.invalid_blocks += 1;
                self.quarantine(peer, "invalid-block");
                false
            }
        }
    }

    fn after_append(&mut self, block: &Block, outcome: AppendOutcome, now: u64) {
        if let Some(store) = self.store.as_mut() {
            let res = match outcome {
                AppendOutcome::Extended | AppendOutcome::Fork => store.put_block(block).map(drop),
                AppendOutcome::Reorg => store.persist_chain(&self.chain),
                AppendOutcome::Duplicate => Ok(()),
            };
            if let Err(e) = res {
                tracing::error!(code = e.code(), "failed to persist block: {e}");
                self.stats.store_errors += 1;
            }
        }
        let height = self.chain.height();
        self.locks = self.locks.split_off(&(height + 1));
        if self.pending.as_ref().is_some_and(|p| p.proposal.height() <= height) {
            self.pending = None;
        }
        if outcome != AppendOutcome::Fork {
            let chain = &self.chain;
            self.mempool.retain(|tx| chain.check_transaction(tx).is_ok());
            self.mempool_ids = self.mempool.iter().map(|tx| tx.tx_id).collect();
        }
        if self.is_authority() {
            self.try_propose(now);
        }
    }

    fn serve_request(&mut self, peer: PeerId, from: u64, to: u64) {
        let to = to.min(from.saturating_add(crate::wire::MAX_WINDOW - 1));
        let mut blocks = Vec::new();
        let mut size = 0;
        for b in self.chain.range(from, to) {
            size += b.canonical_bytes().map_or(0, |v| v.len());
            if size > RESPONSE_BUDGET && !blocks.is_empty() {
                break;
            }
            blocks.push(b.clone());
        }
        self.send(peer, WireMessage::BlockResponse(blocks));
    }

    fn maybe_sync(&mut self, now: u64) {
        if let Some(r) = &mut self.request {
            if now < r.deadline {
                return;
            }
            if r.attempts >= SYNC_ATTEMPTS || self.chain.height() >= r.to {
                self.request = None;
            } else {
                r.attempts += 1;
                r.deadline = now + (self.config.timing.request_timeout << (r.attempts - 1));
                let (peer, from, to) = (r.peer, r.from, r.to);
                self.send(peer, WireMessage::BlockRequest { from_height: from, to_height: to });
                return;
            }
        }
        let best = self
            .live_sessions(now)
            .max_by_key(|(id, s)| (s.head_height, std::cmp::Reverse(*id)))
            .map(|(id, s)| (id, s.head_height));
        let Some((peer, head)) = best else { return };
        let Some((from, to)) = next_window(self.chain.height(), head) else { return };
        self.request =
            Some(Request { peer, from, to, deadline: now + self.config.timing.request_timeout, attempts: 1 });
        self.send(peer, WireMessage::BlockRequest { from_height: from, to_height: to });
    }

    fn scheduled_proposer(&self) -> Fingerprint {
        proposer_for_height(&self.chain.info().authorities, self.chain.height() + 1)
    }

    fn add_to_mempool(&mut self, tx: ProcessTransaction) -> bool {
        if !self.mempool_ids.insert(tx.tx_id) {
            return false;
        }
        self.mempool.push_back(tx);
        true
    }

    /// Admits a locally submitted transaction whose actor has already been
    /// authenticated.
    pub fn submit(&mut self, tx: ProcessTransaction, now: u64) -> Result<SubmitReceipt, SubmitError> {
        if !self.is_authority() {
            return Err(SubmitError::NotAuthoritative);
        }
        tx.tx_hash()?;
        if !self.mempool_ids.contains(&tx.tx_id) {
            self.chain.check_transaction(&tx)?;
        }
        let tx_id = tx.tx_id;
        self.add_to_mempool(tx.clone());
        let proposer = self.scheduled_proposer();
        if proposer == self.id() {
            self.try_propose(now);
            return Ok(SubmitReceipt { tx_id, status: SubmitStatus::Accepted });
        }
        let relay = TxSubmit::new(tx, &self.config.key)?;
        let authorities = self.authority_peers(now);
        let status = match authorities.iter().find(|(_, fp)| *fp == proposer) {
            Some((peer, _)) => {
                self.send(*peer, WireMessage::TxSubmit(relay));
                SubmitStatus::Accepted
            }
            None => {
                for (peer, _) in authorities {
                    self.send(peer, WireMessage::TxSubmit(relay.clone()));
                }
                SubmitStatus::Queued
            }
        };
        Ok(SubmitReceipt { tx_id, status })
    }

    fn receive_submit(&mut self, s: TxSubmit) {
        if !self.is_authority() {
            return;
        }
        let Some(a) = self.chain.info().authorities.by_id(&s.submitter) else { return };
        if !s.verify(&a.public_key) || self.mempool_ids.contains(&s.tx.tx_id) {
            return;
        }
        if self.chain.check_transaction(&s.tx).is_ok() {
            self.add_to_mempool(s.tx);
        }
    }

    fn receive_proposal(&mut self, peer: PeerId, p: BlockProposal, now: u64) {
        let height = p.height();
        if height <= self.chain.height() {
            return;
        }
        if height > self.chain.height() + 1 {
            if let Some(s) = self.peers.get_mut(&peer).and_then(|p| p.session.as_mut()) {
                s.head_height = s.head_height.max(height - 1);
            }
            self.maybe_sync(now);
            return;
        }
        if let Err(e) = self.chain.check_proposal(&p) {
            tracing::debug!(height, code = e.code(), "not countersigning proposal");
            return;
        }
        let hash = p.block_hash();
        if let Some(&(locked, at)) = self.locks.get(&height) {
            if locked != hash && now.saturating_sub(at) < self.config.timing.lock {
                return;
            }
        }
        let Ok(share) = countersign(&p, &self.config.key, &self.chain.info().authorities) else { return };
        self.locks.insert(height, (hash, now));
        self.send(peer, WireMessage::Share { height, share });
    }

    fn receive_share(&mut self, height: u64, share: SignatureShare, now: u64) {
        let authorities = &self.chain.info().authorities;
        let Some(pending) = self.pending.as_mut() else { return };
        if pending.proposal.height() != height || share.block_hash != pending.hash {
            return;
        }
        let Some(a) = authorities.by_id(&share.authority) else { return };
        if share.authority == pending.proposal.header.proposer
            || !a.public_key.verify(&pending.proposal.header.canonical_bytes(), &share.signature)
        {
            return;
        }
        pending.shares.insert(share.authority, share);
        if pending.shares.len() + 1 < authorities.threshold() {
            return;
        }
        let pending = self.pending.take().expect("pending proposal");
        let shares: Vec<_> = pending.shares.into_values().collect();
        let block = match finalize(pending.proposal, &shares, authorities) {
            Ok(b) => b,
            Err(e) => {
                tracing::error!(code = e.code(), "finalize failed");
                return;
            }
        };
        match self.chain.append(block.clone()) {
            Ok(AppendOutcome::Duplicate) => {}
            Ok(outcome) => {
                self.stats.blocks_finalized += 1;
                self.announce(&block, now);
                self.after_append(&block, outcome, now);
            }
            Err(e) => tracing::error!(code = e.code(), "own block rejected"),
        }
    }

    fn announce(&mut self, block: &Block, now: u64) {
        let targets: Vec<PeerId> = self.live_sessions(now).map(|(id, _)| id).collect();
        for peer in targets {
            self.send(peer, WireMessage::BlockAnnounce(block.clone()));
        }
    }

    fn try_propose(&mut self, now: u64) {
        if self.pending.is_some() || self.degraded || self.scheduled_proposer() != self.id() {
            return;
        }
        while let Some(tx) = self.mempool.pop_front() {
            self.mempool_ids.remove(&tx.tx_id);
            if let Err(e) = self.chain.check_transaction(&tx) {
                tracing::debug!(code = e.code(), "dropping stale transaction");
                continue;
            }
            let info = self.chain.info();
            let proposal = match propose_block(tx, self.chain.head(), &self.config.key, &info.authorities, now / 1000) {
                Ok(p) => p,
                Err(e) => {
                    tracing::error!(code = e.code(), "proposal failed");
                    continue;
                }
            };
            let hash = proposal.block_hash();
            self.pending = Some(Pending { proposal, hash, shares: BTreeMap::new(), last_sent: now });
            self.broadcast_proposal(now);
            return;
        }
    }

    fn broadcast_proposal(&mut self, now: u64) {
        let Some(pending) = self.pending.as_mut() else { return };
        pending.last_sent = now;
        let have: HashSet<Fingerprint> = pending.shares.keys().copied().collect();
        let proposal = pending.proposal.clone();
        for (peer, fp) in self.authority_peers(now) {
            if !have.contains(&fp) {
                self.send(peer, WireMessage::Proposal(proposal.clone()));
            }
        }
    }

    fn update_degraded(&mut self, now: u64) {
        let mut reachable: HashSet<Fingerprint> = self.authority_peers(now).into_iter().map(|(_, fp)| fp).collect();
        reachable.insert(self.id());
        let degraded = reachable.len() < MIN_AUTHORITIES;
        if degraded != self.degraded {
            if degraded {
                tracing::warn!(reachable = reachable.len(), "degraded: too few authorities reachable, not proposing");
            } else {
                tracing::info!(reachable = reachable.len(), "authority quorum reachable again");
            }
            self.degraded = degraded;
        }
    }

    /// Drives timers: heartbeats, sync retries, proposal retransmission and
    /// transaction forwarding.
    pub fn tick(&mut self, now: u64) {
        let t = self.config.timing;
        if self.last_heartbeat.is_none_or(|last| now.saturating_sub(last) >= t.heartbeat) {
            self.last_heartbeat = Some(now);
            let hello = self.hello(now);
            let targets: Vec<PeerId> = self.peers.iter().filter(|(_, p)| !p.quarantined).map(|(id, _)| *id).collect();
            for peer in targets {
                self.send(peer, hello.clone());
            }
        }
        self.maybe_sync(now);
        if !self.is_authority() {
            return;
        }
        self.update_degraded(now);
        let head = self.chain.head().block_hash;
        if self.pending.as_ref().is_some_and(|p| p.proposal.header.prev_hash != head) {
            self.pending = None;
        }
        match &self.pending {
            Some(p) if now.saturating_sub(p.last_sent) >= t.proposal_retry => self.broadcast_proposal(now),
            Some(_) => {}
            None => self.try_propose(now),
        }
        if self.pending.is_none() && !self.mempool.is_empty() && now.saturating_sub(self.last_forward) >= t.forward {
            self.last_forward = now;
            self.forward_mempool(now);
        }
    }

    fn forward_mempool(&mut self, now: u64) {
        let proposer = self.scheduled_proposer();
        if proposer == self.id() {
            return;
        }
        let Some((peer, _)) = self.authority_peers(now).into_iter().find(|(_, fp)| *fp == proposer) else { return };
        let relays: Vec<_> =
            self.mempool.iter().filter_map(|tx| TxSubmit::new(tx.clone(), &self.config.key).ok()).collect();
        for r in relays {
            self.send(peer, WireMessage::TxSubmit(r));
        }
    }
}
