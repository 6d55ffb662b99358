//! Core types and rules for the BioTrak supply-chain ledger.
//!
//! Every block carries exactly one [`ProcessTransaction`] and is finalized by
//! a majority of a fixed set of authority nodes. Lot codes link transactions
//! into per-product process trees, and transport legs may carry a sealed
//! temperature series checked against a cold-chain policy.

pub mod actors;
pub mod block;
pub mod chain;
pub mod codec;
pub mod codes;
pub mod coldchain;
pub mod consensus;
pub mod digest;
pub mod genesis;
pub mod keys;
pub mod traceability;
pub mod tx;
pub mod validate;

#[cfg(any(test, feature = "testkit"))]
pub mod testkit;

pub use actors::{ActorRecord, ActorRegistry};
pub use block::{hash_block, Block, BlockHeader, Countersignature, HEADER_LEN};
pub use chain::{AppendError, AppendOutcome, ChainState};
pub use codes::{encode_payload, parse_payload, ChainHint, CodeKind, CodePayload, CodesError};
pub use coldchain::{
    emit_sensor_dump, evaluate_compliance, parse_sensor_dump, seal_series_for_chain, verify_sealed, ColdChainPolicy,
    ComplianceReport, DumpError, Sample, SensorSeries, Temperature, Violation,
};
pub use consensus::{
    countersign, finalize, fork_choice, propose_block, proposer_for_height, Authority, AuthoritySet, BlockProposal,
    ConsensusError, SignatureShare, MIN_AUTHORITIES,
};
pub use digest::{ChainId, Digest, TxId};
pub use genesis::{make_genesis, ActorGrant, AuthorityEntry, GenesisConfig, GenesisError, GenesisInfo};
pub use keys::{ActorId, AuthorityId, Fingerprint, PublicKey, Signature, SigningKey};
pub use traceability::{
    flatten_tree, index_block, latest_version, lot_lifecycle_validate, trace_history, FlatEntry, LifecycleError,
    LotIndex, LotState, LotStatus, ProcessTree, TraceError, TraceState,
};
pub use tx::{
    Decimal, DeliveryNoteId, LotCode, ParamValue, Parameters, ProcessTransaction, ProcessType, Role, ShapeError,
};
pub use validate::{validate_block, BlockError};
