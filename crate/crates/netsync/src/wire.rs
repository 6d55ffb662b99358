//! Peer messages and their framing.
//!
//! A frame is a 4-byte big-endian payload length, a 1-byte message tag and
//! the payload. Payload fields use the canonical encoding; embedded blocks
//! and transactions are length-prefixed canonical byte strings.

use biotrak_core::codec::{DecodeError, Reader, Writer};
use biotrak_core::{
    Block, BlockHeader, BlockProposal, ChainId, Digest, Fingerprint, ProcessTransaction, PublicKey, ShapeError,
    Signature, SignatureShare, SigningKey, HEADER_LEN,
};

/// Largest payload a peer may send.
pub const MAX_FRAME_LEN: u32 = 32 * 1024 * 1024;
/// Most blocks one `BlockRequest` may ask for.
pub const MAX_WINDOW: u64 = 512;

const HELLO_CONTEXT: &[u8] = b"biotrak-hello-v1";
const SUBMIT_CONTEXT: &[u8] = b"biotrak-submit-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Authoritative,
    NonAuthoritative,
}

impl Mode {
    fn tag(self) -> u8 {
        match self {
            Mode::Authoritative => 1,
            Mode::NonAuthoritative => 2,
        }
    }

    fn from_tag(tag: u8, offset: usize) -> Result<Self, DecodeError> {
        match tag {
            1 => Ok(Mode::Authoritative),
            2 => Ok(Mode::NonAuthoritative),
            _ => Err(DecodeError::BadTag { what: "mode", tag, offset }),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Authoritative => "authoritative",
            Mode::NonAuthoritative => "non-authoritative",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hello {
    pub chain_id: ChainId,
    pub mode: Mode,
    pub head_height: u64,
    pub node_key: PublicKey,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub signature: Signature,
}

impl Hello {
    fn signed_bytes(chain_id: &ChainId, mode: Mode, head_height: u64, node_key: &PublicKey, timestamp: u64) -> Vec<u8> {
        let mut w = Writer::new();
        w.fixed(HELLO_CONTEXT);
        w.fixed(&chain_id.0 .0);
        w.u8(mode.tag());
        w.u64(head_height);
        w.fixed(&node_key.to_bytes());
        w.u64(timestamp);
        w.finish()
    }

    pub fn new(key: &SigningKey, chain_id: ChainId, mode: Mode, head_height: u64, timestamp: u64) -> Self {
        let node_key = key.public_key();
        let signature = key.sign(&Self::signed_bytes(&chain_id, mode, head_height, &node_key, timestamp));
        Hello { chain_id, mode, head_height, node_key, timestamp, signature }
    }

    pub fn verify_signature(&self) -> bool {
        let msg = Self::signed_bytes(&self.chain_id, self.mode, self.head_height, &self.node_key, self.timestamp);
        self.node_key.verify(&msg, &self.signature)
    }
}

/// A transaction relayed between nodes, vouched for by the authority that
/// admitted it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxSubmit {
    pub tx: ProcessTransaction,
    pub submitter: Fingerprint,
    pub submitter_signature: Signature,
}

impl TxSubmit {
    fn signed_bytes(tx: &ProcessTransaction) -> Result<Vec<u8>, ShapeError> {
        let mut w = Writer::new();
        w.fixed(SUBMIT_CONTEXT);
        w.fixed(&tx.tx_hash()?.0);
        Ok(w.finish())
    }

    pub fn new(tx: ProcessTransaction, key: &SigningKey) -> Result<Self, ShapeError> {
        let submitter_signature = key.sign(&Self::signed_bytes(&tx)?);
        Ok(TxSubmit { tx, submitter: key.fingerprint(), submitter_signature })
    }

    pub fn verify(&self, key: &PublicKey) -> bool {
        key.fingerprint() == self.submitter
            && Self::signed_bytes(&self.tx).is_ok_and(|m| key.verify(&m, &self.submitter_signature))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireMessage {
    Hello(Hello),
    BlockAnnounce(Block),
    /// Inclusive height range.
    BlockRequest {
        from_height: u64,
        to_height: u64,
    },
    BlockResponse(Vec<Block>),
    TxSubmit(TxSubmit),
    Proposal(BlockProposal),
    Share {
        height: u64,
        share: SignatureShare,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("frame of {0} bytes exceeds the limit")]
    FrameTooLarge(u32),
    #[error("unknown message tag {0}")]
    UnknownTag(u8),
    #[error("malformed payload: {0}")]
    Decode(#[from] DecodeError),
    #[error("message cannot be encoded: {0}")]
    Shape(#[from] ShapeError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl WireMessage {
    pub fn tag(&self) -> u8 {
        match self {
            WireMessage::Hello(_) => 1,
            WireMessage::BlockAnnounce(_) => 2,
            WireMessage::BlockRequest { .. } => 3,
            WireMessage::BlockResponse(_) => 4,
            WireMessage::TxSubmit(_) => 5,
            WireMessage::Proposal(_) => 6,
            WireMessage::Share { .. } => 7,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WireMessage::Hello(_) => "hello",
            WireMessage::BlockAnnounce(_) => "block-announce",
            WireMessage::BlockRequest { .. } => "block-request",
            WireMessage::BlockResponse(_) => "block-response",
            WireMessage::TxSubmit(_) => "tx-submit",
            WireMessage::Proposal(_) => "proposal",
            WireMessage::Share { .. } => "share",
        }
    }

    pub fn encode_payload(&self) -> Result<Vec<u8>, ShapeError> {
        let mut w = Writer::new();
        match self {
            WireMessage::Hello(h) => {
                w.fixed(&h.chain_id.0 .0);
                w.u8(h.mode.tag());
                w.u64(h.head_height);
                w.fixed(&h.node_key.to_bytes());
                w.u64(h.timestamp);
                w.fixed(&h.signature.0);
            }
            WireMessage::BlockAnnounce(b) => w.blob(&b.canonical_bytes()?),
            WireMessage::BlockRequest { from_height, to_height } => {
                w.u64(*from_height);
                w.u64(*to_height);
            }
            WireMessage::BlockResponse(blocks) => {
                w.count(blocks.len());
                for b in blocks {
                    w.blob(&b.canonical_bytes()?);
                }
            }
            WireMessage::TxSubmit(s) => {
                w.blob(&s.tx.canonical_bytes()?);
                w.fixed(&s.submitter.0);
                w.fixed(&s.submitter_signature.0);
            }
            WireMessage::Proposal(p) => {
                w.fixed(&p.header.canonical_bytes());
                w.blob(&p.transaction.canonical_bytes()?);
                w.fixed(&p.proposer_signature.0);
            }
            WireMessage::Share { height, share } => {
                w.u64(*height);
                w.fixed(&share.block_hash.0);
                w.fixed(&share.authority.0);
                w.fixed(&share.signature.0);
            }
        }
        Ok(w.finish())
    }

    pub fn decode_payload(tag: u8, payload: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(payload);
        let msg = match tag {
            1 => {
                let chain_id = ChainId(Digest(r.array()?));
                let at = r.offset();
                let mode = Mode::from_tag(r.u8()?, at)?;
                let head_height = r.u64()?;
                let node_key = PublicKey::from_bytes(&r.array()?)
                    .map_err(|e| DecodeError::Invalid { what: "node key", reason: e.to_string() })?;
                let timestamp = r.u64()?;
                let signature = Signature(r.array()?);
                WireMessage::Hello(Hello { chain_id, mode, head_height, node_key, timestamp, signature })
            }
            2 => WireMessage::BlockAnnounce(Block::from_canonical_bytes(r.blob()?)?),
            3 => WireMessage::BlockRequest { from_height: r.u64()?, to_height: r.u64()? },
            4 => {
                let n = r.count(4)?;
                let mut blocks = Vec::with_capacity(n);
                for _ in 0..n {
                    blocks.push(Block::from_canonical_bytes(r.blob()?)?);
                }
                WireMessage::BlockResponse(blocks)
            }
            5 => WireMessage::TxSubmit(TxSubmit {
                tx: ProcessTransaction::from_canonical_bytes(r.blob()?)?,
                submitter: Fingerprint(r.array()?),
                submitter_signature: Signature(r.array()?),
            }),
            6 => {
                let header = BlockHeader::from_canonical_bytes(r.take(HEADER_LEN)?)?;
                let transaction = ProcessTransaction::from_canonical_bytes(r.blob()?)?;
                let proposer_signature = Signature(r.array()?);
                WireMessage::Proposal(BlockProposal { header, transaction, proposer_signature })
            }
            7 => {
                let height = r.u64()?;
                let share = SignatureShare {
                    block_hash: Digest(r.array()?),
                    authority: Fingerprint(r.array()?),
                    signature: Signature(r.array()?),
                };
                WireMessage::Share { height, share }
            }
            t => return Err(WireError::UnknownTag(t)),
        };
        r.finish()?;
        Ok(msg)
    }

    /// Length, tag and payload.
    pub fn encode_frame(&self) -> Result<Vec<u8>, WireError> {
        let payload = self.encode_payload()?;
        let len = u32::try_from(payload.len()).map_err(|_| WireError::FrameTooLarge(u32::MAX))?;
        if len > MAX_FRAME_LEN {
            return Err(WireError::FrameTooLarge(len));
        }
        let mut out = Vec::with_capacity(payload.len() + 5);
        out.extend_from_slice(&len.to_be_bytes());
        out.push(self.tag());
        out.extend_from_slice(&payload);
        Ok(out)
    }

    /// Decodes one frame from the front of `buf`, returning it and the bytes
    /// consumed, or `None` if `buf` holds only part of a frame.
    pub fn decode_frame(buf: &[u8]) -> Result<Option<(Self, usize)>, WireError> {
        if buf.len() < 5 {
            return Ok(None);
        }
        let len = u32::from_be_bytes(buf[..4].try_into().expect("4 bytes"));
        if len > MAX_FRAME_LEN {
            return Err(WireError::FrameTooLarge(len));
        }
        let end = 5 + len as usize;
        if buf.len() < end {
            return Ok(None);
        }
        let msg = Self::decode_payload(buf[4], &buf[5..end])?;
        Ok(Some((msg, end)))
    }
}
