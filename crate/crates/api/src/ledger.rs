use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use biotrak_core::{
    countersign, finalize, propose_block, proposer_for_height, ChainState, Fingerprint, ProcessTransaction, SigningKey,
};
use biotrak_netsync::{Mode, Runtime, SubmitError, SubmitReceipt, SubmitStatus};

pub fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// What the HTTP layer needs from a node.
pub trait Ledger: Send + Sync + 'static {
    /// Runs `f` against a consistent view of the chain.
    fn read<R>(&self, f: impl FnOnce(&ChainState) -> R) -> R;

    fn submit(&self, tx: ProcessTransaction) -> Result<SubmitReceipt, SubmitError>;

    fn mode(&self) -> Mode;
}

impl Ledger for Runtime {
    fn read<R>(&self, f: impl FnOnce(&ChainState) -> R) -> R {
        Runtime::read(self, |n| f(n.chain()))
    }

    fn submit(&self, tx: ProcessTransaction) -> Result<SubmitReceipt, SubmitError> {
        Runtime::submit(self, tx)
    }

    fn mode(&self) -> Mode {
        Runtime::read(self, |n| n.mode())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("no key for authority {0}")]
pub struct MissingAuthorityKey(pub Fingerprint);

/// A single process holding every authority key. Each accepted submission is
/// sealed and appended before `submit` returns.
pub struct LocalLedger {
    chain: Mutex<ChainState>,
    keys: Vec<SigningKey>,
    mode: Mode,
}

impl LocalLedger {
    pub fn new(chain: ChainState, keys: Vec<SigningKey>) -> Result<Self, MissingAuthorityKey> {
        for a in chain.info().authorities.iter() {
            if !keys.iter().any(|k| k.fingerprint() == a.id) {
                return Err(MissingAuthorityKey(a.id));
            }
        }
        Ok(LocalLedger { chain: Mutex::new(chain), keys, mode: Mode::Authoritative })
    }

    /// Serves reads only; every write is refused as from a replica.
    pub fn read_only(chain: ChainState) -> Self {
        LocalLedger { chain: Mutex::new(chain), keys: Vec::new(), mode: Mode::NonAuthoritative }
    }

    fn key(&self, id: &Fingerprint) -> &SigningKey {
        self.keys.iter().find(|k| k.fingerprint() == *id).expect("checked in new")
    }
}

impl Ledger for LocalLedger {
    fn read<R>(&self, f: impl FnOnce(&ChainState) -> R) -> R {
        f(&self.chain.lock().expect("chain lock"))
    }

    fn submit(&self, tx: ProcessTransaction) -> Result<SubmitReceipt, SubmitError> {
        if self.mode == Mode::NonAuthoritative {
            return Err(SubmitError::NotAuthoritative);
        }
        tx.tx_hash()?;
        let mut chain = self.chain.lock().expect("chain lock");
        chain.check_transaction(&tx)?;
        let tx_id = tx.tx_id;
        let auths = &chain.info().authorities;
        let head = chain.head();
        let proposer = self.key(&proposer_for_height(auths, head.height() + 1));
        let ts = now_secs().max(head.header.timestamp);
        let proposal = propose_block(tx, head, proposer, auths, ts).expect("proposer key is scheduled");
        let shares: Vec<_> = self
            .keys
            .iter()
            .filter(|k| k.fingerprint() != proposal.header.proposer && auths.contains(&k.fingerprint()))
            .take(auths.threshold() - 1)
            .map(|k| countersign(&proposal, k, auths).expect("authority key"))
            .collect();
        let block = finalize(proposal, &shares, auths).expect("threshold met");
        chain.append(block).expect("validated transaction seals into a valid block");
        Ok(SubmitReceipt { tx_id, status: SubmitStatus::Accepted })
    }

    fn mode(&self) -> Mode {
        self.mode
    }
}
