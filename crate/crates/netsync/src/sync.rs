//! Pull-based catch-up against a single peer.

use std::fmt::Display;

use biotrak_core::{AppendOutcome, Block, ChainState};

use crate::wire::MAX_WINDOW;

/// Fetch attempts per window before giving up on the peer.
pub const SYNC_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SyncError {
    #[error("peer served an invalid block at height {height}: {code}")]
    InvalidBlock { height: u64, code: &'static str },
    #[error("peer unavailable after {attempts} attempts: {last}")]
    Unavailable { attempts: u32, last: String },
}

impl SyncError {
    pub fn code(&self) -> &'static str {
        match self {
            SyncError::InvalidBlock { .. } => "invalid-block",
            SyncError::Unavailable { .. } => "unavailable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SyncReport {
    pub appended: u64,
    pub requests: u64,
}

/// Inclusive request window starting after `local_head`.
pub fn next_window(local_head: u64, peer_head: u64) -> Option<(u64, u64)> {
    (peer_head > local_head).then(|| (local_head + 1, peer_head.min(local_head + MAX_WINDOW)))
}

/// Requests blocks in windows of at most [`MAX_WINDOW`] until the local
/// head reaches `peer_head`. Each block is fully validated before it is
/// appended; the first invalid block aborts the sync and leaves everything
/// before it in place. `backoff` is called with the attempt number before
/// each retry.
pub fn sync_to_head<F, E>(
    chain: &mut ChainState,
    peer_head: u64,
    mut fetch: F,
    mut backoff: impl FnMut(u32),
) -> Result<SyncReport, SyncError>
where
    F: FnMut(u64, u64) -> Result<Vec<Block>, E>,
    E: Display,
{
    let mut report = SyncReport::default();
    while let Some((from, to)) = next_window(chain.height(), peer_head) {
        let mut attempt = 0;
        let blocks = loop {
            attempt += 1;
            report.requests += 1;
            let last = match fetch(from, to) {
                Ok(blocks) if !blocks.is_empty() => break blocks,
                Ok(_) => "empty response".to_owned(),
                Err(e) => e.to_string(),
            };
            if attempt == SYNC_ATTEMPTS {
                return Err(SyncError::Unavailable { attempts: attempt, last });
            }
            backoff(attempt);
        };
        for b in blocks.into_iter().take((to - from + 1) as usize) {
            let height = b.height();
            match chain.append(b) {
                Ok(AppendOutcome::Duplicate) => {}
                Ok(_) => report.appended += 1,
                Err(e) => return Err(SyncError::InvalidBlock { height, code: e.code() }),
            }
        }
    }
    Ok(report)
}
