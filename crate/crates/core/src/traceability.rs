//! Lot lifecycle rules and process-tree reconstruction.
//!
//! Lots move through `Registered -> InTransit -> Delivered` once per transport
//! leg and end as `Consumed` when a Production uses them as input. Only
//! Production mints new lot codes; transports and deliveries keep lot identity.
//! Lots first seen in an InboundReceipt come from outside the chain and
//! terminate tree recursion as external inputs.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::actors::ActorRegistry;
use crate::block::Block;
use crate::digest::TxId;
use crate::keys::ActorId;
use crate::tx::{DeliveryNoteId, LotCode, ProcessTransaction, ProcessType, Role, ShapeError};

pub const DEFAULT_MAX_DEPTH: usize = 64;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LotStatus {
    Registered,
    InTransit,
    Delivered,
    Consumed,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct LotState {
    pub lot: LotCode,
    pub status: LotStatus,
    pub origin_tx: TxId,
    pub holder: ActorId,
}

/// Lookup tables maintained as blocks are committed.
#[derive(Clone, Default, PartialEq, Eq, Debug)]
pub struct LotIndex {
    /// Lot -> Production that minted it (first version).
    pub by_output: BTreeMap<LotCode, TxId>,
    /// Lot -> every transaction listing it as input, in block order.
    pub by_reference: BTreeMap<LotCode, Vec<TxId>>,
    /// Transaction -> height of the block carrying it.
    pub by_tx: BTreeMap<TxId, u64>,
    /// Transaction -> the transaction that superseded it.
    pub superseded_by: BTreeMap<TxId, TxId>,
}

/// Registers a committed block's transaction in the index. Idempotent.
pub fn index_block(index: &mut LotIndex, block: &Block) {
    let tx = &block.transaction;
    if index.by_tx.contains_key(&tx.tx_id) {
        return;
    }
    index.by_tx.insert(tx.tx_id, block.header.height);
    if let Some(out) = &tx.output_lot {
        index.by_output.entry(out.clone()).or_insert(tx.tx_id);
    }
    for lot in &tx.input_lots {
        index.by_reference.entry(lot.clone()).or_default().push(tx.tx_id);
    }
    if let Some(old) = tx.supersedes {
        index.superseded_by.insert(old, tx.tx_id);
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
struct TxMeta {
    actor_id: ActorId,
    process_type: ProcessType,
    input_lots: Vec<LotCode>,
    output_lot: Option<LotCode>,
    delivery_note: Option<DeliveryNoteId>,
}

#[derive(Clone, PartialEq, Eq, Debug)]
struct NoteRecord {
    issuer: ActorId,
    lots: BTreeSet<LotCode>,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct TransportRecord {
    pub transporter: ActorId,
    pub lots: Vec<LotCode>,
    prior_holders: Vec<ActorId>,
    pub closed_by: Option<TxId>,
}

/// Lifecycle rule violated by a transaction.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LifecycleError {
    #[error(transparent)]
    Malformed(#[from] ShapeError),
    #[error("bootstrap transactions are only valid in genesis")]
    BootstrapNotAllowed,
    #[error("transaction id {0} already committed")]
    DuplicateTxId(TxId),
    #[error("actor {0} is not registered")]
    UnknownActor(ActorId),
    #[error("actor does not hold the {0:?} role")]
    RoleNotGranted(Role),
    #[error("role {role:?} may not register {process_type}")]
    RoleForbidden { role: Role, process_type: ProcessType },
    #[error("input lot {0} is unknown")]
    UnknownInputLot(LotCode),
    #[error("lot {0} is in transit")]
    LotInTransit(LotCode),
    #[error("lot {0} was already consumed")]
    LotConsumed(LotCode),
    #[error("output lot {0} already exists")]
    DuplicateOutputLot(LotCode),
    #[error("transport reference {0} does not name a transport start")]
    DanglingTransportRef(TxId),
    #[error("transport {0} was already terminated")]
    TransportAlreadyClosed(TxId),
    #[error("transport end lots differ from its transport start")]
    TransportLotMismatch,
    #[error("lot {0} is not held by the submitting actor")]
    WrongHolder(LotCode),
    #[error("delivery note {0} is unknown")]
    UnknownDeliveryNote(DeliveryNoteId),
    #[error("delivery note {0} already issued")]
    DuplicateDeliveryNote(DeliveryNoteId),
    #[error("superseded transaction {0} is unknown")]
    UnknownSupersededTx(TxId),
    #[error("only the original producer may supersede a transaction")]
    SupersedeForbidden,
    #[error("transaction {0} was already superseded")]
    AlreadySuperseded(TxId),
    #[error("a superseding version must keep the process type, lots and delivery note")]
    SupersedeMismatch,
}

impl LifecycleError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        use LifecycleError::*;
        match self {
            Malformed(e) => e.code(),
            BootstrapNotAllowed => "malformed-tx",
            DuplicateTxId(_) => "duplicate-tx-id",
            UnknownActor(_) => "unknown-actor",
            RoleNotGranted(_) => "role-not-granted",
            RoleForbidden { .. } => "role-forbidden",
            UnknownInputLot(_) => "unknown-input-lot",
            LotInTransit(_) => "lot-in-transit",
            LotConsumed(_) => "lot-consumed",
            DuplicateOutputLot(_) => "duplicate-output-lot",
            DanglingTransportRef(_) => "dangling-transport-ref",
            TransportAlreadyClosed(_) => "transport-already-closed",
            TransportLotMismatch => "transport-lot-mismatch",
            WrongHolder(_) => "wrong-holder",
            UnknownDeliveryNote(_) => "unknown-delivery-note",
            DuplicateDeliveryNote(_) => "duplicate-delivery-note",
            UnknownSupersededTx(_) => "unknown-superseded-tx",
            SupersedeForbidden => "supersede-forbidden",
            AlreadySuperseded(_) => "already-superseded",
            SupersedeMismatch => "supersede-mismatch",
        }
    }
}

/// Lot states, index and bookkeeping at one chain head.
#[derive(Clone, Default, PartialEq, Eq, Debug)]
pub struct TraceState {
    pub index: LotIndex,
    pub states: BTreeMap<LotCode, LotState>,
    notes: BTreeMap<DeliveryNoteId, NoteRecord>,
    transports: BTreeMap<TxId, TransportRecord>,
    txs: BTreeMap<TxId, TxMeta>,
}

impl TraceState {
    pub fn lot(&self, lot: &LotCode) -> Option<&LotState> {
        self.states.get(lot)
    }

    pub fn transport(&self, start: &TxId) -> Option<&TransportRecord> {
        self.transports.get(start)
    }

    /// Checks `tx` against this state. See [`lot_lifecycle_validate`].
    pub fn validate(&self, tx: &ProcessTransaction, actors: &ActorRegistry) -> Result<(), LifecycleError> {
        lot_lifecycle_validate(tx, self, actors)
    }

    /// Applies a committed block. The block must have passed validation.
    pub fn apply(&mut self, block: &Block) {
        let tx = &block.transaction;
        if self.txs.contains_key(&tx.tx_id) {
            return;
        }
        index_block(&mut self.index, block);
        self.txs.insert(
            tx.tx_id,
            TxMeta {
                actor_id: tx.actor_id,
                process_type: tx.process_type,
                input_lots: tx.input_lots.clone(),
                output_lot: tx.output_lot.clone(),
                delivery_note: tx.delivery_note.clone(),
            },
        );
        if tx.is_bootstrap() || tx.supersedes.is_some() {
            return;
        }
        match tx.process_type {
            ProcessType::InboundReceipt => {
                for lot in &tx.input_lots {
                    let st = self.states.entry(lot.clone()).or_insert_with(|| LotState {
                        lot: lot.clone(),
                        status: LotStatus::Registered,
                        origin_tx: tx.tx_id,
                        holder: tx.actor_id,
                    });
                    st.holder = tx.actor_id;
                }
            }
            ProcessType::Production => {
                for lot in &tx.input_lots {
                    if let Some(st) = self.states.get_mut(lot) {
                        st.status = LotStatus::Consumed;
                    }
                }
                if let Some(out) = &tx.output_lot {
                    self.states.insert(
                        out.clone(),
                        LotState {
                            lot: out.clone(),
                            status: LotStatus::Registered,
                            origin_tx: tx.tx_id,
                            holder: tx.actor_id,
                        },
                    );
                }
            }
            ProcessType::TransportStart => {
                let mut prior_holders = Vec::with_capacity(tx.input_lots.len());
                for lot in &tx.input_lots {
                    if let Some(st) = self.states.get_mut(lot) {
                        prior_holders.push(st.holder);
                        st.status = LotStatus::InTransit;
                        st.holder = tx.actor_id;
                    }
                }
                self.transports.insert(
                    tx.tx_id,
                    TransportRecord {
                        transporter: tx.actor_id,
                        lots: tx.input_lots.clone(),
                        prior_holders,
                        closed_by: None,
                    },
                );
            }
            ProcessType::TransportEnd => {
                let Some(start) = tx.transport_ref else { return };
                if let Some(rec) = self.transports.get_mut(&start) {
                    rec.closed_by = Some(tx.tx_id);
                    for (lot, prior) in rec.lots.iter().zip(&rec.prior_holders) {
                        if let Some(st) = self.states.get_mut(lot) {
                            st.status = LotStatus::Delivered;
                            st.holder = *prior;
                        }
                    }
                }
            }
            ProcessType::OutboundDelivery => {
                if let Some(note) = &tx.delivery_note {
                    self.notes.insert(
                        note.clone(),
                        NoteRecord { issuer: tx.actor_id, lots: tx.input_lots.iter().cloned().collect() },
                    );
                }
            }
        }
    }
}

/// Checks a transaction against the lot state machine and role grants.
///
/// * InboundReceipt introduces chain-external lots or claims delivered ones.
/// * Production consumes Registered/Delivered lots held by the actor and
///   mints a globally fresh output lot.
/// * TransportStart moves Registered/Delivered lots to InTransit; if it names
///   a delivery note, the note must cover every lot.
/// * TransportEnd closes an open TransportStart of the same transporter.
/// * OutboundDelivery issues a fresh delivery note over lots the actor holds.
/// * A transaction with `supersedes` is a new version of an earlier one by
///   the same Producer and keeps its lots unchanged.
pub fn lot_lifecycle_validate(
    tx: &ProcessTransaction,
    state: &TraceState,
    actors: &ActorRegistry,
) -> Result<(), LifecycleError> {
    use LifecycleError as E;
    if tx.is_bootstrap() {
        return Err(E::BootstrapNotAllowed);
    }
    tx.check_shape()?;
    if state.txs.contains_key(&tx.tx_id) {
        return Err(E::DuplicateTxId(tx.tx_id));
    }
    let actor = actors.get(&tx.actor_id).ok_or(E::UnknownActor(tx.actor_id))?;
    if !actor.roles.contains(&tx.role) {
        return Err(E::RoleNotGranted(tx.role));
    }
    if tx.process_type.required_role() != tx.role {
        return Err(E::RoleForbidden { role: tx.role, process_type: tx.process_type });
    }

    if let Some(old_id) = tx.supersedes {
        let old = state.txs.get(&old_id).ok_or(E::UnknownSupersededTx(old_id))?;
        if tx.role != Role::Producer || old.actor_id != tx.actor_id {
            return Err(E::SupersedeForbidden);
        }
        if state.index.superseded_by.contains_key(&old_id) {
            return Err(E::AlreadySuperseded(old_id));
        }
        if old.process_type != tx.process_type
            || old.input_lots != tx.input_lots
            || old.output_lot != tx.output_lot
            || old.delivery_note != tx.delivery_note
        {
            return Err(E::SupersedeMismatch);
        }
        return Ok(());
    }

    let usable = |lot: &LotCode, require_holder: bool| -> Result<&LotState, LifecycleError> {
        let st = state.states.get(lot).ok_or_else(|| E::UnknownInputLot(lot.clone()))?;
        match st.status {
            LotStatus::InTransit => Err(E::LotInTransit(lot.clone())),
            LotStatus::Consumed => Err(E::LotConsumed(lot.clone())),
            LotStatus::Registered | LotStatus::Delivered => {
                if require_holder && st.holder != tx.actor_id {
                    Err(E::WrongHolder(lot.clone()))
                } else {
                    Ok(st)
                }
            }
        }
    };

    match tx.process_type {
        ProcessType::InboundReceipt => {
            for lot in &tx.input_lots {
                let Some(st) = state.states.get(lot) else { continue };
                match st.status {
                    LotStatus::InTransit => return Err(E::LotInTransit(lot.clone())),
                    LotStatus::Consumed => return Err(E::LotConsumed(lot.clone())),
                    LotStatus::Registered if st.holder != tx.actor_id => return Err(E::WrongHolder(lot.clone())),
                    LotStatus::Registered | LotStatus::Delivered => {}
                }
            }
        }
        ProcessType::Production => {
            for lot in &tx.input_lots {
                usable(lot, true)?;
            }
            let out = tx.output_lot.as_ref().expect("shape checked");
            if state.states.contains_key(out) || state.index.by_output.contains_key(out) {
                return Err(E::DuplicateOutputLot(out.clone()));
            }
        }
        ProcessType::TransportStart => {
            let note = match &tx.delivery_note {
                Some(n) => Some(state.notes.get(n).ok_or_else(|| E::UnknownDeliveryNote(n.clone()))?),
                None => None,
            };
            for lot in &tx.input_lots {
                let st = usable(lot, false)?;
                if let Some(note) = note {
                    if !note.lots.contains(lot) || note.issuer != st.holder {
                        return Err(E::WrongHolder(lot.clone()));
                    }
                }
            }
        }
        ProcessType::TransportEnd => {
            let start_id = tx.transport_ref.expect("shape checked");
            let rec = state.transports.get(&start_id).ok_or(E::DanglingTransportRef(start_id))?;
            if rec.closed_by.is_some() {
                return Err(E::TransportAlreadyClosed(start_id));
            }
            if rec.transporter != tx.actor_id {
                return Err(E::WrongHolder(rec.lots[0].clone()));
            }
            if rec.lots != tx.input_lots {
                return Err(E::TransportLotMismatch);
            }
        }
        ProcessType::OutboundDelivery => {
            let note = tx.delivery_note.as_ref().expect("shape checked");
            if state.notes.contains_key(note) {
                return Err(E::DuplicateDeliveryNote(note.clone()));
            }
            for lot in &tx.input_lots {
                usable(lot, true)?;
            }
        }
    }
    Ok(())
}

/// Read access to committed transactions by block height.
pub trait TxSource {
    fn tx_at_height(&self, height: u64) -> Option<&ProcessTransaction>;
}

impl TxSource for [Block] {
    fn tx_at_height(&self, height: u64) -> Option<&ProcessTransaction> {
        self.get(usize::try_from(height).ok()?).map(|b| &b.transaction)
    }
}

impl TxSource for Vec<Block> {
    fn tx_at_height(&self, height: u64) -> Option<&ProcessTransaction> {
        self.as_slice().tx_at_height(height)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    #[error("lot {0} is unknown")]
    UnknownLot(LotCode),
    #[error("transaction {0} is unknown")]
    UnknownTx(TxId),
    #[error("process tree deeper than {0} levels")]
    DepthExceeded(usize),
}

impl TraceError {
    pub fn code(&self) -> &'static str {
        match self {
            TraceError::UnknownLot(_) => "unknown-lot",
            TraceError::UnknownTx(_) => "unknown-tx",
            TraceError::DepthExceeded(_) => "depth-exceeded",
        }
    }
}

fn tx_by_id<'a, S: TxSource + ?Sized>(id: &TxId, index: &LotIndex, chain: &'a S) -> Option<&'a ProcessTransaction> {
    let h = index.by_tx.get(id)?;
    chain.tx_at_height(*h).filter(|t| t.tx_id == *id)
}

/// Follows `supersedes` links forward to the newest committed version.
pub fn latest_version<'a, S: TxSource + ?Sized>(
    tx_id: &TxId,
    index: &LotIndex,
    chain: &'a S,
) -> Result<&'a ProcessTransaction, TraceError> {
    let mut id = *tx_id;
    if !index.by_tx.contains_key(&id) {
        return Err(TraceError::UnknownTx(id));
    }
    // Each link points to a strictly later block, so this terminates.
    while let Some(next) = index.superseded_by.get(&id) {
        id = *next;
    }
    tx_by_id(&id, index, chain).ok_or(TraceError::UnknownTx(id))
}

/// A lot with no on-chain Production origin, with the events recorded on it.
#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct ExternalInput {
    pub lot: LotCode,
    pub events: Vec<ProcessTransaction>,
}

/// Provenance of one lot.
///
/// `root_tx` is the lot's defining transaction (the Production minting it, or
/// the InboundReceipt introducing it), `legs` are the later events on the
/// same lot (transports, deliveries, receipts). Inputs with an on-chain
/// Production origin become subtrees; the rest are external inputs.
#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct ProcessTree {
    pub lot: LotCode,
    pub root_tx: ProcessTransaction,
    pub legs: Vec<ProcessTransaction>,
    pub input_subtrees: Vec<ProcessTree>,
    pub external_inputs: Vec<ExternalInput>,
}

impl ProcessTree {
    /// Number of transactions the tree lists (matches `flatten_tree` length).
    pub fn entry_count(&self) -> usize {
        1 + self.legs.len()
            + self.input_subtrees.iter().map(ProcessTree::entry_count).sum::<usize>()
            + self.external_inputs.iter().map(|e| e.events.len()).sum::<usize>()
    }
}

/// Events on `lot` other than `exclude`, excluding consuming Productions and
/// superseded versions, in block order.
fn lot_events<S: TxSource + ?Sized>(
    lot: &LotCode,
    exclude: Option<&TxId>,
    index: &LotIndex,
    chain: &S,
) -> Vec<ProcessTransaction> {
    let Some(ids) = index.by_reference.get(lot) else { return Vec::new() };
    ids.iter()
        .filter(|id| !index.superseded_by.contains_key(id) && Some(*id) != exclude)
        .filter_map(|id| tx_by_id(id, index, chain))
        .filter(|t| t.process_type != ProcessType::Production)
        .cloned()
        .collect()
}

/// Reconstructs the process tree of `lot` by following input lots back to
/// their origin transactions.
pub fn trace_history<S: TxSource + ?Sized>(
    lot: &LotCode,
    index: &LotIndex,
    chain: &S,
    max_depth: usize,
) -> Result<ProcessTree, TraceError> {
    if let Some(origin) = index.by_output.get(lot) {
        return build_node(lot, origin, index, chain, 1, max_depth);
    }
    let first =
        index.by_reference.get(lot).and_then(|ids| ids.first()).ok_or_else(|| TraceError::UnknownLot(lot.clone()))?;
    if max_depth == 0 {
        return Err(TraceError::DepthExceeded(max_depth));
    }
    let root = latest_version(first, index, chain)?.clone();
    let legs = lot_events(lot, Some(&root.tx_id), index, chain);
    Ok(ProcessTree { lot: lot.clone(), root_tx: root, legs, input_subtrees: Vec::new(), external_inputs: Vec::new() })
}

fn build_node<S: TxSource + ?Sized>(
    lot: &LotCode,
    origin: &TxId,
    index: &LotIndex,
    chain: &S,
    level: usize,
    max_depth: usize,
) -> Result<ProcessTree, TraceError> {
    if level > max_depth {
        return Err(TraceError::DepthExceeded(max_depth));
    }
    let root = latest_version(origin, index, chain)?.clone();
    let legs = lot_events(lot, Some(&root.tx_id), index, chain);
    let mut inputs: Vec<&LotCode> = root.input_lots.iter().collect();
    inputs.sort();
    let mut input_subtrees = Vec::new();
    let mut external_inputs = Vec::new();
    for input in inputs {
        match index.by_output.get(input) {
            Some(o) => input_subtrees.push(build_node(input, o, index, chain, level + 1, max_depth)?),
            None => {
                if level + 1 > max_depth {
                    return Err(TraceError::DepthExceeded(max_depth));
                }
                external_inputs
                    .push(ExternalInput { lot: input.clone(), events: lot_events(input, None, index, chain) });
            }
        }
    }
    Ok(ProcessTree { lot: lot.clone(), root_tx: root, legs, input_subtrees, external_inputs })
}

/// One line of a flattened tree.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct FlatEntry<'a> {
    pub depth: usize,
    pub lot: &'a LotCode,
    pub tx: &'a ProcessTransaction,
    pub external: bool,
}

/// Pre-order listing: a node's defining transaction, then its legs, then its
/// inputs (subtrees and external lots together) ordered by lot code.
pub fn flatten_tree(tree: &ProcessTree) -> Vec<FlatEntry<'_>> {
    let mut out = Vec::with_capacity(tree.entry_count());
    flatten_into(tree, 0, &mut out);
    out
}

fn flatten_into<'a>(tree: &'a ProcessTree, depth: usize, out: &mut Vec<FlatEntry<'a>>) {
    out.push(FlatEntry { depth, lot: &tree.lot, tx: &tree.root_tx, external: false });
    for leg in &tree.legs {
        out.push(FlatEntry { depth, lot: &tree.lot, tx: leg, external: false });
    }
    enum Child<'a> {
        Sub(&'a ProcessTree),
        Ext(&'a ExternalInput),
    }
    let mut children: Vec<(&LotCode, Child<'a>)> = tree
        .input_subtrees
        .iter()
        .map(|t| (&t.lot, Child::Sub(t)))
        .chain(tree.external_inputs.iter().map(|e| (&e.lot, Child::Ext(e))))
        .collect();
    children.sort_by(|a, b| a.0.cmp(b.0));
    for (_, child) in children {
        match child {
            Child::Sub(t) => flatten_into(t, depth + 1, out),
            Child::Ext(e) => {
                for ev in &e.events {
                    out.push(FlatEntry { depth: depth + 1, lot: &e.lot, tx: ev, external: true });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::ChainState;
    use crate::testkit::*;

    fn err(chain: &ChainState, tx: ProcessTransaction) -> LifecycleError {
        chain.check_transaction(&tx).unwrap_err()
    }

    #[test]
    fn index_block_production_and_idempotence() {
        let fx = Fixture::new(3, 1, 1);
        let mut chain = fx.chain();
        let p = &fx.producers[0];
        fx.commit(&mut chain, fx.inbound(p, 1, &["A", "B"], "N1")).unwrap();
        let prod = fx.production(p, 2, &["A", "B"], "C");
        let block = fx.commit(&mut chain, prod.clone()).unwrap();
        let idx = &chain.trace().index;
        assert_eq!(idx.by_output[&lot("C")], prod.tx_id);
        assert_eq!(idx.by_reference[&lot("A")].last(), Some(&prod.tx_id));
        assert_eq!(idx.by_reference[&lot("B")].last(), Some(&prod.tx_id));
        let mut again = idx.clone();
        index_block(&mut again, &block);
        assert_eq!(&again, idx);
    }

    #[test]
    fn production_rules() {
        let fx = Fixture::new(3, 2, 1);
        let mut chain = fx.chain();
        let (p, q, t) = (&fx.producers[0], &fx.producers[1], &fx.transporters[0]);
        fx.commit(&mut chain, fx.inbound(p, 1, &["A", "B", "X"], "N1")).unwrap();
        fx.commit(&mut chain, fx.production(p, 2, &["A"], "C")).unwrap();
        assert_eq!(err(&chain, fx.production(p, 3, &["B"], "C")), LifecycleError::DuplicateOutputLot(lot("C")));
        assert_eq!(err(&chain, fx.production(p, 3, &["A"], "D")), LifecycleError::LotConsumed(lot("A")));
        assert_eq!(err(&chain, fx.production(p, 3, &["Z"], "D")), LifecycleError::UnknownInputLot(lot("Z")));
        assert_eq!(err(&chain, fx.production(q, 3, &["B"], "D")), LifecycleError::WrongHolder(lot("B")));
        fx.commit(&mut chain, fx.transport_start(t, 4, &["X"], None)).unwrap();
        assert_eq!(err(&chain, fx.production(p, 5, &["X"], "D")), LifecycleError::LotInTransit(lot("X")));
    }

    #[test]
    fn transport_cycle_and_termination() {
        let fx = Fixture::new(3, 1, 2);
        let mut chain = fx.chain();
        let (p, t, u) = (&fx.producers[0], &fx.transporters[0], &fx.transporters[1]);
        fx.commit(&mut chain, fx.inbound(p, 1, &["A"], "N1")).unwrap();
        let start = fx.transport_start(t, 2, &["A"], None);
        fx.commit(&mut chain, start.clone()).unwrap();
        assert_eq!(chain.trace().lot(&lot("A")).unwrap().status, LotStatus::InTransit);
        assert_eq!(
            err(&chain, fx.transport_end(u, 3, start.tx_id, &["A"], None)),
            LifecycleError::WrongHolder(lot("A"))
        );
        assert_eq!(
            err(&chain, fx.transport_end(t, 3, TxId([9; 16]), &["A"], None)),
            LifecycleError::DanglingTransportRef(TxId([9; 16]))
        );
        fx.commit(&mut chain, fx.transport_end(t, 3, start.tx_id, &["A"], None)).unwrap();
        let st = chain.trace().lot(&lot("A")).unwrap();
        assert_eq!((st.status, st.holder), (LotStatus::Delivered, p.fingerprint()));
        assert_eq!(
            err(&chain, fx.transport_end(t, 4, start.tx_id, &["A"], None)),
            LifecycleError::TransportAlreadyClosed(start.tx_id)
        );
        // A second leg from Delivered is allowed.
        fx.commit(&mut chain, fx.transport_start(u, 5, &["A"], None)).unwrap();
    }

    #[test]
    fn roles_are_enforced() {
        let fx = Fixture::new(3, 1, 1);
        let mut chain = fx.chain();
        let (p, t) = (&fx.producers[0], &fx.transporters[0]);
        let mut tx = fx.inbound(t, 1, &["A"], "N1");
        tx.role = Role::Producer;
        assert_eq!(chain.check_transaction(&tx), Err(LifecycleError::RoleNotGranted(Role::Producer)));
        let mut tx = fx.inbound(p, 1, &["A"], "N1");
        tx.role = Role::Transporter;
        assert_eq!(chain.check_transaction(&tx), Err(LifecycleError::RoleNotGranted(Role::Transporter)));
        fx.commit(&mut chain, fx.inbound(p, 1, &["A"], "N1")).unwrap();
        let mut tx = fx.transport_start(t, 2, &["A"], None);
        tx.role = Role::Transporter;
        tx.process_type = ProcessType::OutboundDelivery;
        tx.delivery_note = Some(lot("N2"));
        assert_eq!(
            chain.check_transaction(&tx),
            Err(LifecycleError::RoleForbidden { role: Role::Transporter, process_type: ProcessType::OutboundDelivery })
        );
    }

    #[test]
    fn delivery_notes() {
        let fx = Fixture::new(3, 2, 1);
        let mut chain = fx.chain();
        let (p, q, t) = (&fx.producers[0], &fx.producers[1], &fx.transporters[0]);
        fx.commit(&mut chain, fx.inbound(p, 1, &["A", "B"], "SUP-1")).unwrap();
        fx.commit(&mut chain, fx.outbound(p, 2, &["A"], "DN-1")).unwrap();
        assert_eq!(err(&chain, fx.outbound(p, 3, &["B"], "DN-1")), LifecycleError::DuplicateDeliveryNote(lot("DN-1")));
        assert_eq!(err(&chain, fx.outbound(q, 3, &["B"], "DN-2")), LifecycleError::WrongHolder(lot("B")));
        assert_eq!(
            err(&chain, fx.transport_start(t, 3, &["A"], Some("DN-9"))),
            LifecycleError::UnknownDeliveryNote(lot("DN-9"))
        );
        assert_eq!(err(&chain, fx.transport_start(t, 3, &["B"], Some("DN-1"))), LifecycleError::WrongHolder(lot("B")));
        let start = fx.transport_start(t, 3, &["A"], Some("DN-1"));
        fx.commit(&mut chain, start.clone()).unwrap();
        fx.commit(&mut chain, fx.transport_end(t, 4, start.tx_id, &["A"], None)).unwrap();
        // Recipient claims the delivered lot and may then consume it.
        fx.commit(&mut chain, fx.inbound(q, 5, &["A"], "DN-1")).unwrap();
        fx.commit(&mut chain, fx.production(q, 6, &["A"], "Q1")).unwrap();
    }

    #[test]
    fn supersede_rules_and_latest_version() {
        let fx = Fixture::new(3, 2, 1);
        let mut chain = fx.chain();
        let (p, q) = (&fx.producers[0], &fx.producers[1]);
        fx.commit(&mut chain, fx.inbound(p, 1, &["A"], "N1")).unwrap();
        let v1 = fx.production(p, 2, &["A"], "C");
        fx.commit(&mut chain, v1.clone()).unwrap();
        assert_eq!(chain.latest_version(&v1.tx_id).unwrap().tx_id, v1.tx_id);

        let v2 = fx.supersede(&v1, 3, "batch_weight_kg", "120");
        let mut foreign = fx.supersede(&v1, 3, "x", "1");
        foreign.actor_id = q.fingerprint();
        assert_eq!(chain.check_transaction(&foreign), Err(LifecycleError::SupersedeForbidden));
        let mut moved = fx.supersede(&v1, 3, "x", "1");
        moved.output_lot = Some(lot("D"));
        assert_eq!(chain.check_transaction(&moved), Err(LifecycleError::SupersedeMismatch));
        fx.commit(&mut chain, v2.clone()).unwrap();
        assert_eq!(chain.latest_version(&v1.tx_id).unwrap().tx_id, v2.tx_id);
        assert_eq!(
            chain.check_transaction(&fx.supersede(&v1, 4, "x", "2")),
            Err(LifecycleError::AlreadySuperseded(v1.tx_id))
        );
        let tree = chain.trace_history(&lot("C")).unwrap();
        assert_eq!(tree.root_tx.tx_id, v2.tx_id);
        assert_eq!(tree.entry_count(), 2);
        assert_eq!(chain.latest_version(&TxId([1; 16])), Err(TraceError::UnknownTx(TxId([1; 16]))));
    }

    #[test]
    fn single_node_and_chain_trees() {
        let fx = Fixture::new(3, 1, 1);
        let mut chain = fx.chain();
        let p = &fx.producers[0];
        fx.commit(&mut chain, fx.inbound(p, 1, &["A"], "N1")).unwrap();
        let t = chain.trace_history(&lot("A")).unwrap();
        assert!(t.input_subtrees.is_empty() && t.external_inputs.is_empty() && t.legs.is_empty());
        assert_eq!(flatten_tree(&t).len(), 1);

        fx.commit(&mut chain, fx.production(p, 2, &["A"], "B")).unwrap();
        fx.commit(&mut chain, fx.production(p, 3, &["B"], "C")).unwrap();
        let t = chain.trace_history(&lot("C")).unwrap();
        let flat = flatten_tree(&t);
        assert_eq!(flat.iter().map(|e| e.depth).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(flat[2].external);
        assert_eq!(chain.trace().trace(&lot("C"), &chain, 2), Err(TraceError::DepthExceeded(2)));
        assert_eq!(chain.trace_history(&lot("NOPE")), Err(TraceError::UnknownLot(lot("NOPE"))));
    }

    #[test]
    fn flatten_orders_children_by_lot_code() {
        let fx = Fixture::new(3, 1, 1);
        let mut chain = fx.chain();
        let p = &fx.producers[0];
        fx.commit(&mut chain, fx.inbound(p, 1, &["B"], "N1")).unwrap();
        fx.commit(&mut chain, fx.inbound(p, 2, &["A0"], "N2")).unwrap();
        fx.commit(&mut chain, fx.production(p, 3, &["A0"], "A")).unwrap();
        fx.commit(&mut chain, fx.production(p, 4, &["B", "A"], "C")).unwrap();
        let t = chain.trace_history(&lot("C")).unwrap();
        let lots: Vec<&str> = flatten_tree(&t).iter().map(|e| e.lot.as_str()).collect();
        assert_eq!(lots, vec!["C", "A", "A0", "B"]);
    }
}
