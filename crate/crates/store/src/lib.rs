//! Durable block storage.
//!
//! Canonical blocks are appended to numbered segment files in height order.
//! Blocks that lose fork choice live in a separate overflow file until they
//! are buried deep enough to be pruned. All lookup tables are rebuilt from
//! the files on [`BlockStore::open`], so the files are the only state.

mod segment;

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use biotrak_core::{index_block, AppendError, Block, ChainState, Digest, GenesisError, LotIndex, ShapeError};

use segment::{encode_record, read_record, scan_one, Scanned, RECORD_OVERHEAD};

pub const DEFAULT_SEGMENT_MAX_BYTES: u64 = 64 * 1024 * 1024;
pub const DEFAULT_FORK_RETENTION: u64 = 128;

const FORK_FILE: &str = "forks.log";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt record in {file} at offset {offset} is not at the tail")]
    CorruptBeyondTail { file: PathBuf, offset: u64 },
    #[error("stored block failed verification on read")]
    HashMismatchOnRead,
    #[error("block not found")]
    NotFound,
    #[error("block at height {height} does not attach to the stored chain")]
    NotAttachable { height: u64 },
    #[error("block fails its own hash check")]
    Integrity,
    #[error("block cannot be encoded: {0}")]
    Shape(#[from] ShapeError),
    #[error("stored genesis is invalid: {0}")]
    Genesis(#[from] GenesisError),
    #[error("stored block at height {height} no longer validates: {source}")]
    Replay { height: u64, source: AppendError },
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::Io(_) => "io",
            StoreError::CorruptBeyondTail { .. } => "corrupt-beyond-tail",
            StoreError::HashMismatchOnRead => "hash-mismatch-on-read",
            StoreError::NotFound => "not-found",
            StoreError::NotAttachable { .. } => "not-attachable",
            StoreError::Integrity => "integrity",
            StoreError::Shape(e) => e.code(),
            StoreError::Genesis(e) => e.code(),
            StoreError::Replay { source, .. } => source.code(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub segment_max_bytes: u64,
    /// Fork blocks this many heights below the head are dropped.
    pub fork_retention: u64,
    /// fsync after every write.
    pub sync_writes: bool,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            segment_max_bytes: DEFAULT_SEGMENT_MAX_BYTES,
            fork_retention: DEFAULT_FORK_RETENTION,
            sync_writes: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockRef {
    Height(u64),
    Hash(Digest),
}

/// A damaged tail that was cut off while opening.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveryReport {
    pub file: PathBuf,
    pub truncated_at: u64,
    pub discarded_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutOutcome {
    Appended,
    Fork,
    Duplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FileId {
    Segment(u32),
    Fork,
}

#[derive(Debug, Clone, Copy)]
struct Loc {
    file: FileId,
    offset: u64,
}

#[derive(Debug, Clone, Copy)]
struct ForkEntry {
    loc: Loc,
    height: u64,
}

#[derive(Debug)]
struct SegmentMeta {
    id: u32,
    len: u64,
}

#[derive(Debug)]
pub struct BlockStore {
    dir: PathBuf,
    config: StoreConfig,
    segments: Vec<SegmentMeta>,
    canonical: Vec<(Loc, Digest)>,
    by_hash: HashMap<Digest, u64>,
    forks: HashMap<Digest, ForkEntry>,
    fork_len: u64,
    recovery: Vec<RecoveryReport>,
}

fn segment_name(id: u32) -> String {
    format!("segment-{id:08}.log")
}

fn parse_segment_name(name: &str) -> Option<u32> {
    name.strip_prefix("segment-")?.strip_suffix(".log")?.parse().ok()
}

impl BlockStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::open_with(dir, StoreConfig::default())
    }

    pub fn open_with(dir: impl AsRef<Path>, config: StoreConfig) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut ids: Vec<u32> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| parse_segment_name(e.file_name().to_str()?))
            .collect();
        ids.sort_unstable();

        let mut store = BlockStore {
            dir,
            config,
            segments: Vec::new(),
            canonical: Vec::new(),
            by_hash: HashMap::new(),
            forks: HashMap::new(),
            fork_len: 0,
            recovery: Vec::new(),
        };
        for (i, &id) in ids.iter().enumerate() {
            let last = i + 1 == ids.len();
            let len = store.load_segment(id, last)?;
            store.segments.push(SegmentMeta { id, len });
        }
        store.load_forks()?;
        Ok(store)
    }

    fn path(&self, file: FileId) -> PathBuf {
        match file {
            FileId::Segment(id) => self.dir.join(segment_name(id)),
            FileId::Fork => self.dir.join(FORK_FILE),
        }
    }

    fn truncate_tail(&mut self, path: &Path, file: &File, at: u64, file_len: u64) -> io::Result<()> {
        file.set_len(at)?;
        file.sync_all()?;
        tracing::warn!(file = %path.display(), offset = at, discarded = file_len - at, "truncated damaged tail");
        self.recovery.push(RecoveryReport {
            file: path.to_path_buf(),
            truncated_at: at,
            discarded_bytes: file_len - at,
        });
        Ok(())
    }

    fn load_segment(&mut self, id: u32, last: bool) -> Result<u64, StoreError> {
        let path = self.path(FileId::Segment(id));
        let mut file = OpenOptions::new().read(true).write(true).open(&path)?;
        let file_len = file.metadata()?.len();
        let mut offset = 0;
        loop {
            let damaged_at = match scan_one(&mut file, offset, file_len)? {
                Scanned::End => return Ok(offset),
                Scanned::Torn { offset } => offset,
                Scanned::BadCrc { offset, end } if end == file_len => offset,
                Scanned::BadCrc { offset, .. } => return Err(StoreError::CorruptBeyondTail { file: path, offset }),
                Scanned::Record { offset: at, bytes } => {
                    let next = at + bytes.len() as u64 + RECORD_OVERHEAD;
                    let block = Block::from_canonical_bytes(&bytes)
                        .ok()
                        .filter(|b| b.verify_integrity().is_ok() && self.links_to_head(b));
                    let Some(block) = block else {
                        return Err(StoreError::CorruptBeyondTail { file: path, offset: at });
                    };
                    let hash = block.hash();
                    self.by_hash.insert(hash, block.height());
                    self.canonical.push((Loc { file: FileId::Segment(id), offset: at }, hash));
                    offset = next;
                    continue;
                }
            };
            if !last {
                return Err(StoreError::CorruptBeyondTail { file: path, offset: damaged_at });
            }
            self.truncate_tail(&path, &file, damaged_at, file_len)?;
            return Ok(damaged_at);
        }
    }

    fn links_to_head(&self, block: &Block) -> bool {
        match self.canonical.last() {
            None => block.height() == 0,
            Some((_, head)) => block.height() == self.canonical.len() as u64 && block.header.prev_hash == *head,
        }
    }

    fn load_forks(&mut self) -> Result<(), StoreError> {
        let path = self.path(FileId::Fork);
        let mut file = match OpenOptions::new().read(true).write(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        let file_len = file.metadata()?.len();
        let mut offset = 0;
        loop {
            match scan_one(&mut file, offset, file_len)? {
                Scanned::End => break,
                Scanned::Record { offset: at, bytes } => {
                    let parsed = Block::from_canonical_bytes(&bytes).ok().filter(|b| b.verify_integrity().is_ok());
                    let Some(block) = parsed else {
                        // Fork blocks can be fetched again from peers, so any damage ends the file.
                        self.truncate_tail(&path, &file, at, file_len)?;
                        break;
                    };
                    if !self.by_hash.contains_key(&block.hash()) {
                        let loc = Loc { file: FileId::Fork, offset: at };
                        self.forks.insert(block.hash(), ForkEntry { loc, height: block.height() });
                    }
                    offset = at + bytes.len() as u64 + RECORD_OVERHEAD;
                }
                Scanned::Torn { offset: at } | Scanned::BadCrc { offset: at, .. } => {
                    self.truncate_tail(&path, &file, at, file_len)?;
                    break;
                }
            }
        }
        self.fork_len = offset;
        Ok(())
    }

    /// Damaged tails cut off by the last [`open`](Self::open).
    pub fn recovery(&self) -> &[RecoveryReport] {
        &self.recovery
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn is_empty(&self) -> bool {
        self.canonical.is_empty()
    }

    pub fn head(&self) -> Option<(u64, Digest)> {
        self.canonical.last().map(|(_, h)| (self.canonical.len() as u64 - 1, *h))
    }

    pub fn hash_at(&self, height: u64) -> Option<Digest> {
        self.canonical.get(usize::try_from(height).ok()?).map(|(_, h)| *h)
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    pub fn fork_count(&self) -> usize {
        self.forks.len()
    }

    pub fn contains(&self, hash: &Digest) -> bool {
        self.by_hash.contains_key(hash) || self.forks.contains_key(hash)
    }

    fn height_of(&self, hash: &Digest) -> Option<u64> {
        self.by_hash.get(hash).copied().or_else(|| self.forks.get(hash).map(|f| f.height))
    }

    pub fn put_block(&mut self, block: &Block) -> Result<PutOutcome, StoreError> {
        block.verify_integrity().map_err(|_| StoreError::Integrity)?;
        let hash = block.hash();
        if self.by_hash.contains_key(&hash) {
            return Ok(PutOutcome::Duplicate);
        }
        if self.links_to_head(block) {
            self.append_canonical(block)?;
            self.forks.remove(&hash);
            self.prune_forks()?;
            return Ok(PutOutcome::Appended);
        }
        if self.forks.contains_key(&hash) {
            return Ok(PutOutcome::Duplicate);
        }
        match self.height_of(&block.header.prev_hash) {
            Some(h) if h + 1 == block.height() => {
                self.append_fork(block)?;
                Ok(PutOutcome::Fork)
            }
            _ => Err(StoreError::NotAttachable { height: block.height() }),
        }
    }

    fn sync_dir(&self) -> io::Result<()> {
        if self.config.sync_writes {
            File::open(&self.dir)?.sync_all()?;
        }
        Ok(())
    }

    fn write_at_end(&self, file: FileId, record: &[u8]) -> io::Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(self.path(file))?;
        f.write_all(record)?;
        if self.config.sync_writes {
            f.sync_data()?;
        }
        Ok(())
    }

    fn append_canonical(&mut self, block: &Block) -> Result<(), StoreError> {
        let record = encode_record(&block.canonical_bytes()?);
        let rotate = match self.segments.last() {
            None => true,
            Some(s) => s.len > 0 && s.len + record.len() as u64 > self.config.segment_max_bytes,
        };
        if rotate {
            let id = self.segments.last().map_or(0, |s| s.id + 1);
            File::create(self.path(FileId::Segment(id)))?;
            self.sync_dir()?;
            self.segments.push(SegmentMeta { id, len: 0 });
        }
        let seg = self.segments.last_mut().expect("segment exists");
        let loc = Loc { file: FileId::Segment(seg.id), offset: seg.len };
        let file = loc.file;
        seg.len += record.len() as u64;
        self.write_at_end(file, &record)?;
        self.by_hash.insert(block.hash(), block.height());
        self.canonical.push((loc, block.hash()));
        Ok(())
    }

    fn append_fork(&mut self, block: &Block) -> Result<(), StoreError> {
        let record = encode_record(&block.canonical_bytes()?);
        let loc = Loc { file: FileId::Fork, offset: self.fork_len };
        self.write_at_end(FileId::Fork, &record)?;
        self.fork_len += record.len() as u64;
        self.forks.insert(block.hash(), ForkEntry { loc, height: block.height() });
        Ok(())
    }

    fn prune_forks(&mut self) -> Result<(), StoreError> {
        let Some((head, _)) = self.head() else { return Ok(()) };
        let floor = head.saturating_sub(self.config.fork_retention);
        if !self.forks.values().any(|f| f.height <= floor) {
            return Ok(());
        }
        let mut keep: Vec<(Digest, ForkEntry)> =
            self.forks.iter().map(|(h, f)| (*h, *f)).filter(|(_, f)| f.height > floor).collect();
        keep.sort_by_key(|(_, f)| f.loc.offset);
        let tmp = self.dir.join("forks.log.tmp");
        let mut out = File::create(&tmp)?;
        let mut forks = HashMap::new();
        let mut offset = 0;
        for (hash, entry) in keep {
            let bytes = self.read_verified(entry.loc, &hash)?.canonical_bytes()?;
            let record = encode_record(&bytes);
            out.write_all(&record)?;
            forks.insert(hash, ForkEntry { loc: Loc { file: FileId::Fork, offset }, height: entry.height });
            offset += record.len() as u64;
        }
        out.sync_all()?;
        fs::rename(&tmp, self.path(FileId::Fork))?;
        self.sync_dir()?;
        self.forks = forks;
        self.fork_len = offset;
        Ok(())
    }

    fn read_verified(&self, loc: Loc, expected: &Digest) -> Result<Block, StoreError> {
        let mut file = File::open(self.path(loc.file))?;
        let bytes = read_record(&mut file, loc.offset)?.ok_or(StoreError::HashMismatchOnRead)?;
        let block = Block::from_canonical_bytes(&bytes).map_err(|_| StoreError::HashMismatchOnRead)?;
        if block.verify_integrity().is_err() || block.hash() != *expected {
            return Err(StoreError::HashMismatchOnRead);
        }
        Ok(block)
    }

    /// Reads a block back from disk, re-checking its checksum and hashes.
    pub fn get_block(&self, at: BlockRef) -> Result<Block, StoreError> {
        let (loc, hash) = match at {
            BlockRef::Height(h) => {
                *usize::try_from(h).ok().and_then(|i| self.canonical.get(i)).ok_or(StoreError::NotFound)?
            }
            BlockRef::Hash(hash) => match self.by_hash.get(&hash) {
                Some(&h) => self.canonical[h as usize],
                None => (self.forks.get(&hash).ok_or(StoreError::NotFound)?.loc, hash),
            },
        };
        self.read_verified(loc, &hash)
    }

    /// Canonical blocks from `from` up to the head, in height order.
    pub fn blocks_from(&self, from: u64) -> impl Iterator<Item = Result<Block, StoreError>> + '_ {
        (from..self.canonical.len() as u64).map(|h| self.get_block(BlockRef::Height(h)))
    }

    pub fn fork_blocks(&self) -> Result<Vec<Block>, StoreError> {
        let mut entries: Vec<_> = self.forks.iter().collect();
        entries.sort_by_key(|(_, f)| (f.height, f.loc.offset));
        entries.into_iter().map(|(h, f)| self.read_verified(f.loc, h)).collect()
    }

    /// Drops canonical blocks above `height`, moving them to the fork file.
    pub fn rewind_to(&mut self, height: u64) -> Result<Vec<Block>, StoreError> {
        let keep = height as usize + 1;
        if keep >= self.canonical.len() {
            return Ok(Vec::new());
        }
        let removed: Vec<Block> = self.blocks_from(keep as u64).collect::<Result<_, _>>()?;
        let cut = self.canonical[keep].0;
        let FileId::Segment(cut_id) = cut.file else { unreachable!("canonical blocks live in segments") };
        while let Some(seg) = self.segments.last() {
            if seg.id == cut_id {
                break;
            }
            fs::remove_file(self.path(FileId::Segment(seg.id)))?;
            self.segments.pop();
        }
        let f = OpenOptions::new().write(true).open(self.path(cut.file))?;
        f.set_len(cut.offset)?;
        f.sync_all()?;
        self.sync_dir()?;
        self.segments.last_mut().expect("cut segment kept").len = cut.offset;
        for (_, hash) in self.canonical.drain(keep..) {
            self.by_hash.remove(&hash);
        }
        for b in &removed {
            self.append_fork(b)?;
        }
        Ok(removed)
    }

    /// Makes the stored canonical chain match `chain`, rewinding past any
    /// divergence.
    pub fn persist_chain(&mut self, chain: &ChainState) -> Result<(), StoreError> {
        let mut common = self.head().map(|(h, _)| h.min(chain.height()));
        while let Some(h) = common {
            if self.hash_at(h) == chain.block_at(h).map(|b| b.hash()) {
                break;
            }
            common = h.checked_sub(1);
        }
        match common {
            Some(h) => {
                self.rewind_to(h)?;
            }
            None if !self.is_empty() => {
                return Err(StoreError::NotAttachable { height: 0 });
            }
            None => {}
        }
        let from = common.map_or(0, |h| h + 1);
        for b in chain.range(from, chain.height()) {
            self.put_block(b)?;
        }
        Ok(())
    }

    /// Replays every stored block through full validation.
    pub fn load_chain(&self) -> Result<Option<ChainState>, StoreError> {
        let mut blocks = self.blocks_from(0);
        let Some(genesis) = blocks.next().transpose()? else { return Ok(None) };
        let mut chain = ChainState::new(genesis)?;
        for b in blocks {
            let b = b?;
            let height = b.height();
            chain.append(b).map_err(|source| StoreError::Replay { height, source })?;
        }
        for b in self.fork_blocks()? {
            if let Err(e) = chain.append(b) {
                tracing::debug!(code = e.code(), "dropping stored fork block");
            }
        }
        Ok(Some(chain))
    }

    /// Builds a lot index by scanning the segments.
    pub fn rebuild_lot_index(&self) -> Result<LotIndex, StoreError> {
        let mut index = LotIndex::default();
        for b in self.blocks_from(0) {
            index_block(&mut index, &b?);
        }
        Ok(index)
    }
}
