//! HTTP interface of a BioTrak node.
//!
//! Writes (`POST`) must carry a detached request signature from a registered
//! actor holding the role the transaction needs. Reads are anonymous.
//! The router is generic over a [`Ledger`], implemented for the networked
//! [`biotrak_netsync::Runtime`] and for the in-process [`LocalLedger`].

pub mod auth;
mod error;
mod ledger;
mod routes;
pub mod views;

pub use auth::{signing_message, AuthError, AuthHeaders, MAX_SKEW_SECS};
pub use error::{ApiError, ErrorBody, ErrorDetail};
pub use ledger::{now_secs, Ledger, LocalLedger, MissingAuthorityKey};
pub use routes::{required_role, router, ApiConfig, TerminateResponse, DUMP_FIELD};

/// Serves `router` on `listener` until the future is dropped or fails.
pub async fn serve(listener: tokio::net::TcpListener, router: axum::Router) -> std::io::Result<()> {
    axum::serve(listener, router).await
}
