//! Per-organization ledger: hash-chain log, operation store and object cache.
//!
//! The log holds every committed transaction, valid or not. The operation
//! store keeps the operations of valid transactions keyed by
//! `(object_id, sequence)`, which is what cache misses are rebuilt from.
//! The cache maps object ids to materialized [`CrdtObject`]s, each behind
//! its own lock.
//!
//! On disk a ledger is a directory with two append-only files of
//! length-prefixed frames: `blocks.log` (one canonical block per frame) and
//! `ops.log` (one frame per valid transaction). A torn frame at the end of
//! either file is dropped on load.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use lru::LruCache;
use orderless_core::codec::{Decoder, Encoder};
use orderless_core::crypto::sha256;
use orderless_core::{
    Block, ChainBreak, CrdtObject, Decode, DecodeError, Encode, Hash32, HashChain, Operation, OperationPath,
    StateView, Transaction, Validity, View,
};
use thiserror::Error;

const BLOCKS_FILE: &str = "blocks.log";
const OPS_FILE: &str = "ops.log";

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("transaction {0} already committed")]
    DuplicateTransaction(Hash32),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt {file}: {source}")]
    Corrupt {
        file: &'static str,
        #[source]
        source: DecodeError,
    },
    #[error("operation store does not match the log at height {0}")]
    StoreMismatch(u64),
}

/// Operations of valid transactions in commit order, per object.
#[derive(Debug, Default)]
struct OpStore {
    ops: BTreeMap<(String, u64), Operation>,
    next_seq: u64,
}

impl OpStore {
    fn insert_all(&mut self, ops: &[Operation]) -> u64 {
        let first = self.next_seq;
        for op in ops {
            self.ops.insert((op.object_id.clone(), self.next_seq), op.clone());
            self.next_seq += 1;
        }
        first
    }

    fn object_ops<'a>(&'a self, object_id: &str) -> impl Iterator<Item = &'a Operation> + 'a {
        let start = (object_id.to_owned(), 0);
        let object_id = object_id.to_owned();
        self.ops
            .range(start..)
            .take_while(move |((id, _), _)| *id == object_id)
            .map(|(_, op)| op)
    }

    fn object_ids(&self) -> BTreeSet<String> {
        self.ops.keys().map(|(id, _)| id.clone()).collect()
    }
}

fn apply_skipping_failures<'a>(obj: &mut CrdtObject, ops: impl IntoIterator<Item = &'a Operation>) {
    for op in ops {
        // A type conflict only affects that operation; the rest of the
        // write-set still applies, identically here and on replay.
        let _ = obj.apply(op);
    }
}

fn replay(store: &OpStore, object_id: &str) -> CrdtObject {
    let mut obj = CrdtObject::new(object_id);
    apply_skipping_failures(&mut obj, store.object_ops(object_id));
    obj
}

struct Disk {
    blocks: BufWriter<File>,
    ops: BufWriter<File>,
}

fn write_frame(out: &mut BufWriter<File>, payload: &[u8]) -> std::io::Result<()> {
    let mut frame = Vec::with_capacity(payload.len() + 4);
    frame.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    frame.extend_from_slice(payload);
    out.write_all(&frame)?;
    out.flush()
}

/// Complete frames of a file. A trailing partial frame is ignored.
fn read_frames(path: &Path) -> std::io::Result<Vec<Vec<u8>>> {
    let mut buf = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut buf)?;
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    }
    let mut frames = Vec::new();
    let mut rest = buf.as_slice();
    while rest.len() >= 4 {
        let len = u32::from_be_bytes(rest[..4].try_into().expect("4 bytes")) as usize;
        if rest.len() < 4 + len {
            break;
        }
        frames.push(rest[4..4 + len].to_vec());
        rest = &rest[4 + len..];
    }
    Ok(frames)
}

fn ops_frame(height: u64, first_seq: u64, ops: &[Operation]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut enc = Encoder::new(&mut out);
    enc.u64(height);
    enc.u64(first_seq);
    enc.seq(ops);
    out
}

struct AppendState {
    chain: HashChain,
    committed: HashMap<Hash32, u64>,
    disk: Option<Disk>,
}

/// Ledger of one organization for one application.
pub struct Ledger {
    append: Mutex<AppendState>,
    store: RwLock<OpStore>,
    cache: Mutex<LruCache<String, Arc<RwLock<CrdtObject>>>>,
}

impl Default for Ledger {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl Ledger {
    pub fn in_memory() -> Self {
        Self::build(HashChain::new(), OpStore::default(), None, None)
    }

    /// In-memory ledger whose cache holds at most `cap` objects.
    pub fn with_cache_cap(cap: usize) -> Self {
        Self::build(HashChain::new(), OpStore::default(), None, NonZeroUsize::new(cap))
    }

    fn build(chain: HashChain, store: OpStore, disk: Option<Disk>, cap: Option<NonZeroUsize>) -> Self {
        let committed = chain
            .blocks()
            .iter()
            .map(|b| (b.transaction.tx_id, b.height))
            .collect();
        Self {
            append: Mutex::new(AppendState { chain, committed, disk }),
            store: RwLock::new(store),
            cache: Mutex::new(match cap {
                Some(cap) => LruCache::new(cap),
                None => LruCache::unbounded(),
            }),
        }
    }

    /// Opens (or creates) a ledger directory. Every later append is written
    /// through to disk.
    pub fn open(dir: &Path) -> Result<Self, LedgerError> {
        std::fs::create_dir_all(dir)?;
        let (chain, store) = load_dir(dir)?;
        // Rewrite the files so a torn tail does not linger.
        write_snapshot(dir, &chain, &store)?;
        let appender = |name| -> std::io::Result<BufWriter<File>> {
            Ok(BufWriter::new(OpenOptions::new().append(true).open(dir.join(name))?))
        };
        let disk = Disk {
            blocks: appender(BLOCKS_FILE)?,
            ops: appender(OPS_FILE)?,
        };
        Ok(Self::build(chain, store, Some(disk), None))
    }

    /// Loads a ledger directory read-only into memory.
    pub fn load(dir: &Path) -> Result<Self, LedgerError> {
        let (chain, store) = load_dir(dir)?;
        Ok(Self::build(chain, store, None, None))
    }

    /// Writes the full ledger into `dir` in the on-disk format.
    pub fn save(&self, dir: &Path) -> Result<(), LedgerError> {
        std::fs::create_dir_all(dir)?;
        let state = self.append.lock().expect("ledger lock");
        let store = self.store.read().expect("store lock");
        write_snapshot(dir, &state.chain, &store)
    }

    /// Appends `tx` with its verdict. Valid write-sets go to the operation
    /// store and the cache.
    pub fn append_block(&self, tx: Transaction, validity: Validity) -> Result<Block, LedgerError> {
        let mut state = self.append.lock().expect("ledger lock");
        if state.committed.contains_key(&tx.tx_id) {
            return Err(LedgerError::DuplicateTransaction(tx.tx_id));
        }
        let tx_id = tx.tx_id;
        let block = state.chain.append(tx, validity).clone();
        state.committed.insert(tx_id, block.height);
        if let Some(disk) = state.disk.as_mut() {
            write_frame(&mut disk.blocks, &block.to_bytes())?;
        }
        if validity == Validity::Valid {
            let ops = &block.transaction.write_set;
            let first_seq = self.store.write().expect("store lock").insert_all(ops);
            if let Some(disk) = state.disk.as_mut() {
                write_frame(&mut disk.ops, &ops_frame(block.height, first_seq, ops))?;
            }
            self.update_cache(ops);
        }
        Ok(block)
    }

    fn update_cache(&self, ops: &[Operation]) {
        let mut by_object: BTreeMap<&str, Vec<&Operation>> = BTreeMap::new();
        for op in ops {
            by_object.entry(&op.object_id).or_default().push(op);
        }
        for (object_id, ops) in by_object {
            let obj = self.cached(object_id);
            // A freshly rebuilt object already contains `ops`; applying them
            // again is a no-op.
            apply_skipping_failures(&mut obj.write().expect("object lock"), ops);
        }
    }

    fn cached(&self, object_id: &str) -> Arc<RwLock<CrdtObject>> {
        let mut cache = self.cache.lock().expect("cache lock");
        if let Some(obj) = cache.get(object_id) {
            return obj.clone();
        }
        let obj = Arc::new(RwLock::new(replay(&self.store.read().expect("store lock"), object_id)));
        cache.put(object_id.to_owned(), obj.clone());
        obj
    }

    pub fn read_object(&self, object_id: &str, path: &OperationPath) -> View {
        if !self.cache.lock().expect("cache lock").contains(object_id)
            && self.store.read().expect("store lock").object_ops(object_id).next().is_none()
        {
            return View::NotFound;
        }
        let obj = self.cached(object_id);
        let view = obj.read().expect("object lock").read(path);
        view
    }

    /// Snapshot of a materialized object, from the cache when present.
    pub fn object(&self, object_id: &str) -> CrdtObject {
        self.cached(object_id).read().expect("object lock").clone()
    }

    /// Rebuilds an object from the operation store, bypassing the cache.
    pub fn replay_object(&self, object_id: &str) -> CrdtObject {
        replay(&self.store.read().expect("store lock"), object_id)
    }

    pub fn object_ids(&self) -> BTreeSet<String> {
        self.store.read().expect("store lock").object_ids()
    }

    pub fn cached_objects(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    pub fn evict_all(&self) {
        self.cache.lock().expect("cache lock").clear();
    }

    /// Digest over every object's canonical state, in object id order.
    pub fn state_digest(&self) -> Hash32 {
        let mut bytes = Vec::new();
        let mut enc = Encoder::new(&mut bytes);
        for id in self.object_ids() {
            enc.str(&id);
            enc.fixed(&self.object(&id).digest().0);
        }
        sha256(&bytes)
    }

    pub fn contains(&self, tx_id: &Hash32) -> bool {
        self.append.lock().expect("ledger lock").committed.contains_key(tx_id)
    }

    pub fn block_of(&self, tx_id: &Hash32) -> Option<Block> {
        let state = self.append.lock().expect("ledger lock");
        let height = *state.committed.get(tx_id)?;
        state.chain.get(height).cloned()
    }

    pub fn get(&self, height: u64) -> Option<Block> {
        self.append.lock().expect("ledger lock").chain.get(height).cloned()
    }

    pub fn len(&self) -> usize {
        self.append.lock().expect("ledger lock").chain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn head_hash(&self) -> Hash32 {
        self.append.lock().expect("ledger lock").chain.head_hash()
    }

    pub fn blocks(&self) -> Vec<Block> {
        self.append.lock().expect("ledger lock").chain.blocks().to_vec()
    }

    pub fn valid_tx_ids(&self) -> BTreeSet<Hash32> {
        let state = self.append.lock().expect("ledger lock");
        state
            .chain
            .blocks()
            .iter()
            .filter(|b| b.validity == Validity::Valid)
            .map(|b| b.transaction.tx_id)
            .collect()
    }

    pub fn verify(&self) -> Result<(), ChainBreak> {
        self.append.lock().expect("ledger lock").chain.verify()
    }

    pub fn verify_chain(&self) -> bool {
        self.verify().is_ok()
    }

    /// Objects whose cached state differs from a replay of the operation store.
    pub fn cache_divergence(&self) -> Vec<String> {
        let cache = self.cache.lock().expect("cache lock");
        let store = self.store.read().expect("store lock");
        cache
            .iter()
            .filter(|(id, obj)| obj.read().expect("object lock").digest() != replay(&store, id).digest())
            .map(|(id, _)| id.clone())
            .collect()
    }
}

impl StateView for Ledger {
    fn read(&self, object_id: &str, path: &OperationPath) -> View {
        self.read_object(object_id, path)
    }
}

fn load_dir(dir: &Path) -> Result<(HashChain, OpStore), LedgerError> {
    let corrupt = |file| move |source| LedgerError::Corrupt { file, source };
    let blocks = read_frames(&dir.join(BLOCKS_FILE))?
        .iter()
        .map(|f| Block::from_bytes(f))
        .collect::<Result<Vec<_>, _>>()
        .map_err(corrupt(BLOCKS_FILE))?;
    let chain = HashChain::from_blocks(blocks);

    let mut store = OpStore::default();
    let mut stored_heights = BTreeSet::new();
    for frame in read_frames(&dir.join(OPS_FILE))? {
        let mut dec = Decoder::new(&frame);
        let decoded = (|| -> Result<_, DecodeError> {
            let height = dec.u64()?;
            let first_seq = dec.u64()?;
            let ops: Vec<Operation> = dec.seq()?;
            Ok((height, first_seq, ops))
        })();
        let (height, first_seq, ops) = decoded.map_err(corrupt(OPS_FILE))?;
        let block = chain.get(height).ok_or(LedgerError::StoreMismatch(height))?;
        if first_seq != store.next_seq || block.validity != Validity::Valid || block.transaction.write_set != ops {
            return Err(LedgerError::StoreMismatch(height));
        }
        store.insert_all(&ops);
        stored_heights.insert(height);
    }
    // A crash between the two appends leaves a valid block without its
    // operations; they are recovered from the block itself.
    for block in chain.blocks() {
        if block.validity == Validity::Valid && !stored_heights.contains(&block.height) {
            if stored_heights.range(block.height..).next().is_some() {
                return Err(LedgerError::StoreMismatch(block.height));
            }
            store.insert_all(&block.transaction.write_set);
        }
    }
    Ok((chain, store))
}

fn write_snapshot(dir: &Path, chain: &HashChain, store: &OpStore) -> Result<(), LedgerError> {
    let tmp = |name: &str| -> PathBuf { dir.join(format!("{name}.tmp")) };
    let mut blocks = BufWriter::new(File::create(tmp(BLOCKS_FILE))?);
    let mut ops = BufWriter::new(File::create(tmp(OPS_FILE))?);
    let mut seq = 0;
    for block in chain.blocks() {
        write_frame(&mut blocks, &block.to_bytes())?;
        if block.validity == Validity::Valid {
            let ws = &block.transaction.write_set;
            write_frame(&mut ops, &ops_frame(block.height, seq, ws))?;
            seq += ws.len() as u64;
        }
    }
    debug_assert_eq!(seq, store.next_seq);
    drop((blocks, ops));
    for name in [BLOCKS_FILE, OPS_FILE] {
        std::fs::rename(tmp(name), dir.join(name))?;
    }
    Ok(())
}
