//! Peer networking for BioTrak nodes.
//!
//! Authority nodes exchange proposals and countersignature shares and
//! announce finalized blocks; replicas follow by requesting block ranges.
//! Every received block is fully validated before it touches local state.

pub mod node;
pub mod session;
pub mod sim;
pub mod sync;
pub mod tcp;
pub mod wire;

pub use node::{
    Action, Node, NodeConfig, NodeError, NodeStats, PeerId, PeerInfo, SubmitError, SubmitReceipt, SubmitStatus, Timing,
};
pub use session::{handshake, HandshakeError, PeerSession, MAX_HELLO_SKEW_SECS};
pub use sim::{SimConfig, SimNetwork, SimStats};
pub use sync::{next_window, sync_to_head, SyncError, SyncReport, SYNC_ATTEMPTS};
pub use tcp::{now_ms, Runtime, RuntimeConfig};
pub use wire::{Hello, Mode, TxSubmit, WireError, WireMessage, MAX_FRAME_LEN, MAX_WINDOW};
