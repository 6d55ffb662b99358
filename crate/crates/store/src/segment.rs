//! Record framing: `[u32 BE length][block bytes][u32 LE CRC32 of block bytes]`.

use std::fs::File;
use std::io::{self, Read, Seek, SeekFrom};

pub const RECORD_OVERHEAD: u64 = 8;

pub fn encode_record(block_bytes: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(block_bytes.len() + RECORD_OVERHEAD as usize);
    out.extend_from_slice(&(block_bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(block_bytes);
    out.extend_from_slice(&crc32fast::hash(block_bytes).to_le_bytes());
    out
}

/// Outcome of reading one record during a scan.
#[derive(Debug)]
pub enum Scanned {
    Record {
        offset: u64,
        bytes: Vec<u8>,
    },
    /// The file ends inside a record.
    Torn {
        offset: u64,
    },
    /// The record is complete but its checksum does not match.
    BadCrc {
        offset: u64,
        end: u64,
    },
    End,
}

/// Reads the record starting at `offset` of a file of `file_len` bytes.
pub fn scan_one(file: &mut File, offset: u64, file_len: u64) -> io::Result<Scanned> {
    if offset == file_len {
        return Ok(Scanned::End);
    }
    if file_len - offset < 4 {
        return Ok(Scanned::Torn { offset });
    }
    file.seek(SeekFrom::Start(offset))?;
    let mut len = [0u8; 4];
    file.read_exact(&mut len)?;
    let len = u64::from(u32::from_be_bytes(len));
    let end = offset + 4 + len + 4;
    if end > file_len {
        return Ok(Scanned::Torn { offset });
    }
    let mut bytes = vec![0u8; len as usize];
    file.read_exact(&mut bytes)?;
    let mut crc = [0u8; 4];
    file.read_exact(&mut crc)?;
    if crc32fast::hash(&bytes) != u32::from_le_bytes(crc) {
        return Ok(Scanned::BadCrc { offset, end });
    }
    Ok(Scanned::Record { offset, bytes })
}

/// Reads and checksums the record at `offset`; `None` on a checksum mismatch.
pub fn read_record(file: &mut File, offset: u64) -> io::Result<Option<Vec<u8>>> {
    let file_len = file.metadata()?.len();
    match scan_one(file, offset, file_len)? {
        Scanned::Record { bytes, .. } => Ok(Some(bytes)),
        _ => Ok(None),
    }
}
