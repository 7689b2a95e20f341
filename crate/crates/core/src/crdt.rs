//! Replicated objects and the operation-application algorithm.
//!
//! A [`CrdtObject`] is a tree of [`CrdtNode`]s rooted at a single node. Maps
//! nest arbitrarily; counters and registers are leaves. Operations are
//! applied one at a time: the path is walked from the root, missing
//! intermediate maps are created, and the type-specific conflict rule runs
//! at the addressed location, which also records the operation id so a
//! re-delivered operation is a no-op.
//!
//! Conflict rules:
//!
//! * **G-Counter** adds are commutative and always applied.
//! * **MV-Register** keeps, per client, only the write with the highest
//!   clock. Writes of different clients are concurrent and all survive.
//! * **Map** keys written with `InsertValue` behave like registers: a later
//!   write of the same client replaces the earlier one, while concurrent
//!   writes of different clients are all kept and surface as a conflict map
//!   keyed `<key>#<client>:<clock>`.
//!
//! Because every location state is a per-client maximum, the final state
//! depends only on the *set* of applied operations and never on their order.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use hashbrown::{HashMap, HashSet};
use thiserror::Error;

use crate::clock::{LamportClock, OperationId};
use crate::codec::{Decode, DecodeError, Decoder, Encode, Encoder};
use crate::crypto::{sha256, Hash32};
use crate::op::{CrdtKind, Operation, OperationPath, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CrdtError {
    #[error("operation targets object {found}, expected {expected}")]
    ObjectMismatch { expected: String, found: String },
    #[error("type mismatch at {path}: location holds {existing}, operation is {requested}")]
    TypeMismatch {
        path: OperationPath,
        existing: &'static str,
        requested: CrdtKind,
    },
    #[error("malformed operation {op}: {reason}")]
    MalformedOperation { op: OperationId, reason: &'static str },
}

impl Operation {
    /// Checks the operation's shape independently of any state.
    pub fn validate(&self) -> Result<(), CrdtError> {
        let malformed = |reason| {
            Err(CrdtError::MalformedOperation {
                op: self.id.clone(),
                reason,
            })
        };
        match self.kind {
            CrdtKind::GCounter => match self.value {
                Some(Value::Int(v)) if v > 0 => Ok(()),
                Some(Value::Int(_)) => malformed("counter increment must be positive"),
                Some(_) => malformed("counter increment must be an integer"),
                None => malformed("counter increment cannot be null"),
            },
            CrdtKind::CrdtMap if self.path.is_root() => {
                malformed("map insert needs a key as the last path segment")
            }
            _ => Ok(()),
        }
    }
}

/// Grow-only counter.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GCounter {
    total: u64,
    applied: HashMap<OperationId, u64>,
}

impl GCounter {
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn applied(&self) -> impl Iterator<Item = &OperationId> {
        self.applied.keys()
    }

    fn add(&mut self, id: &OperationId, amount: u64) -> bool {
        match self.applied.get_mut(id) {
            None => {
                self.applied.insert(id.clone(), amount);
                self.total = self.total.wrapping_add(amount);
                true
            }
            // A re-used id with a different amount can only come from a
            // misbehaving client. Keeping the largest amount per id keeps the
            // total independent of delivery order.
            Some(prev) if amount > *prev => {
                self.total = self.total.wrapping_add(amount - *prev);
                *prev = amount;
                true
            }
            Some(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Write {
    clock: LamportClock,
    value: Option<Value>,
}

/// Multi-value register. Also backs the scalar slots of a map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MvRegister {
    latest: BTreeMap<String, Write>,
    applied: HashSet<OperationId>,
}

impl MvRegister {
    /// Surviving values in canonical `(client, clock)` order.
    pub fn survivors(&self) -> impl Iterator<Item = (OperationId, &Value)> + '_ {
        self.latest.iter().filter_map(|(client, w)| {
            w.value.as_ref().map(|v| {
                (
                    OperationId {
                        client_id: client.clone(),
                        clock: w.clock,
                    },
                    v,
                )
            })
        })
    }

    pub fn values(&self) -> Vec<Value> {
        self.survivors().map(|(_, v)| v.clone()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.latest.values().all(|w| w.value.is_none())
    }

    pub fn applied(&self) -> impl Iterator<Item = &OperationId> {
        self.applied.iter()
    }

    fn assign(&mut self, id: &OperationId, value: Option<&Value>) -> bool {
        let fresh = self.applied.insert(id.clone());
        match self.latest.get_mut(&id.client_id) {
            None => {
                self.latest.insert(
                    id.client_id.clone(),
                    Write {
                        clock: id.clock,
                        value: value.cloned(),
                    },
                );
                true
            }
            Some(w) if id.clock > w.clock => {
                w.clock = id.clock;
                w.value = value.cloned();
                true
            }
            // Same id seen again. Identical content is the idempotent case;
            // differing content gets a deterministic winner.
            Some(w) if id.clock == w.clock && value > w.value.as_ref() => {
                w.value = value.cloned();
                true
            }
            Some(_) => fresh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MapEntry {
    Node(CrdtNode),
    /// A scalar written with `InsertValue`.
    Value(MvRegister),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CrdtMap {
    entries: BTreeMap<String, MapEntry>,
}

impl CrdtMap {
    pub fn get(&self, key: &str) -> Option<&MapEntry> {
        self.entries.get(key)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &MapEntry)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CrdtNode {
    Counter(GCounter),
    Map(CrdtMap),
    Register(MvRegister),
}

impl CrdtNode {
    pub fn empty(kind: CrdtKind) -> Self {
        match kind {
            CrdtKind::GCounter => CrdtNode::Counter(GCounter::default()),
            CrdtKind::CrdtMap => CrdtNode::Map(CrdtMap::default()),
            CrdtKind::MvRegister => CrdtNode::Register(MvRegister::default()),
        }
    }

    pub fn kind(&self) -> CrdtKind {
        match self {
            CrdtNode::Counter(_) => CrdtKind::GCounter,
            CrdtNode::Map(_) => CrdtKind::CrdtMap,
            CrdtNode::Register(_) => CrdtKind::MvRegister,
        }
    }

    pub fn view(&self) -> View {
        match self {
            CrdtNode::Counter(c) => View::Counter(c.total()),
            CrdtNode::Register(r) => View::Register(r.values()),
            CrdtNode::Map(m) => {
                let mut out = BTreeMap::new();
                for (key, entry) in &m.entries {
                    let v = entry_view(key, entry);
                    if v != View::NotFound {
                        out.insert(key.clone(), v);
                    }
                }
                View::Map(out)
            }
        }
    }
}

fn entry_view(key: &str, entry: &MapEntry) -> View {
    match entry {
        MapEntry::Node(n) => n.view(),
        MapEntry::Value(slot) => slot_view(key, slot),
    }
}

fn slot_view(key: &str, slot: &MvRegister) -> View {
    let mut survivors = slot.survivors();
    let Some((first_id, first)) = survivors.next() else {
        return View::NotFound;
    };
    let Some((second_id, second)) = survivors.next() else {
        return View::Value(first.clone());
    };
    let mut conflict = BTreeMap::new();
    for (id, v) in [(first_id, first), (second_id, second)].into_iter().chain(survivors) {
        conflict.insert(conflict_key(key, &id), View::Value(v.clone()));
    }
    View::Map(conflict)
}

/// Key under which a concurrent map write appears in a conflict map.
pub fn conflict_key(key: &str, id: &OperationId) -> String {
    format!("{key}#{}:{}", id.client_id, id.clock)
}

/// Side-effect free read result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum View {
    NotFound,
    Counter(u64),
    /// Register survivors in canonical `(client, clock)` order.
    Register(Vec<Value>),
    Map(BTreeMap<String, View>),
    Value(Value),
}

impl View {
    pub fn is_found(&self) -> bool {
        !matches!(self, View::NotFound)
    }

    pub fn as_counter(&self) -> Option<u64> {
        match self {
            View::Counter(v) => Some(*v),
            _ => None,
        }
    }
}

impl Encode for View {
    fn encode(&self, enc: &mut Encoder<'_>) {
        match self {
            View::NotFound => enc.u8(0),
            View::Counter(v) => {
                enc.u8(1);
                enc.u64(*v);
            }
            View::Register(values) => {
                enc.u8(2);
                enc.seq(values);
            }
            View::Map(entries) => {
                enc.u8(3);
                enc.len(entries.len());
                for (k, v) in entries {
                    enc.str(k);
                    v.encode(enc);
                }
            }
            View::Value(v) => {
                enc.u8(4);
                v.encode(enc);
            }
        }
    }
}

impl Decode for View {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(match dec.u8()? {
            0 => View::NotFound,
            1 => View::Counter(dec.u64()?),
            2 => View::Register(dec.seq()?),
            3 => {
                let len = dec.len()?;
                let mut out = BTreeMap::new();
                for _ in 0..len {
                    let k = dec.string()?;
                    out.insert(k, View::decode(dec)?);
                }
                View::Map(out)
            }
            4 => View::Value(Value::decode(dec)?),
            tag => return Err(DecodeError::InvalidTag { what: "view", tag }),
        })
    }
}

/// A replicated object as materialized by one organization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrdtObject {
    object_id: String,
    root: Option<CrdtNode>,
}

impl CrdtObject {
    pub fn new(object_id: impl Into<String>) -> Self {
        Self {
            object_id: object_id.into(),
            root: None,
        }
    }

    pub fn object_id(&self) -> &str {
        &self.object_id
    }

    pub fn root(&self) -> Option<&CrdtNode> {
        self.root.as_ref()
    }

    pub fn is_empty(&self) -> bool {
        self.root.is_none()
    }

    /// Applies `ops` in order. Stops at the first failing operation; the
    /// operations before it stay applied. Returns how many operations
    /// changed the state (re-deliveries do not).
    pub fn apply_operations<'a, I>(&mut self, ops: I) -> Result<usize, CrdtError>
    where
        I: IntoIterator<Item = &'a Operation>,
    {
        let mut changed = 0;
        for op in ops {
            if self.apply(op)? {
                changed += 1;
            }
        }
        Ok(changed)
    }

    /// Applies one operation: create the missing path, locate the
    /// modification point, resolve against what is already there.
    pub fn apply(&mut self, op: &Operation) -> Result<bool, CrdtError> {
        if op.object_id != self.object_id {
            return Err(CrdtError::ObjectMismatch {
                expected: self.object_id.clone(),
                found: op.object_id.clone(),
            });
        }
        op.validate()?;

        let segments = op.path.segments();
        // Map inserts address the parent map; the last segment is the key.
        let target = match op.kind {
            CrdtKind::CrdtMap => &segments[..segments.len() - 1],
            _ => segments,
        };
        let root_kind = if target.is_empty() {
            op.kind
        } else {
            CrdtKind::CrdtMap
        };
        let root = self.root.get_or_insert_with(|| CrdtNode::empty(root_kind));
        let location = locate(root, target, op)?;
        resolve_conflict(location, op)
    }

    /// Reads the subtree at `path`. Never mutates.
    pub fn read(&self, path: &OperationPath) -> View {
        let Some(mut node) = self.root.as_ref() else {
            return View::NotFound;
        };
        let segments = path.segments();
        for (i, seg) in segments.iter().enumerate() {
            let CrdtNode::Map(map) = node else {
                return View::NotFound;
            };
            match map.entries.get(seg) {
                None => return View::NotFound,
                Some(MapEntry::Node(child)) => node = child,
                Some(MapEntry::Value(slot)) => {
                    return if i + 1 == segments.len() {
                        slot_view(seg, slot)
                    } else {
                        View::NotFound
                    };
                }
            }
        }
        node.view()
    }

    pub fn digest(&self) -> Hash32 {
        sha256(&self.to_bytes())
    }
}

fn type_mismatch(op: &Operation, existing: &'static str) -> CrdtError {
    CrdtError::TypeMismatch {
        path: op.path.clone(),
        existing,
        requested: op.kind,
    }
}

/// Walks `segments` from `node`, creating missing maps on the way and the
/// leaf (of the kind the operation needs) at the end.
///
/// Kind checks happen on existing nodes before anything is created, so a
/// failing operation leaves the object untouched.
fn locate<'a>(
    node: &'a mut CrdtNode,
    segments: &[String],
    op: &Operation,
) -> Result<&'a mut CrdtNode, CrdtError> {
    let leaf_kind = op.kind;
    let Some((head, rest)) = segments.split_first() else {
        return if node.kind() == leaf_kind {
            Ok(node)
        } else {
            Err(type_mismatch(op, node.kind().name()))
        };
    };
    let CrdtNode::Map(map) = node else {
        return Err(type_mismatch(op, node.kind().name()));
    };
    let child_kind = if rest.is_empty() {
        leaf_kind
    } else {
        CrdtKind::CrdtMap
    };
    let entry = map
        .entries
        .entry(head.clone())
        .or_insert_with(|| MapEntry::Node(CrdtNode::empty(child_kind)));
    match entry {
        MapEntry::Node(child) => locate(child, rest, op),
        MapEntry::Value(_) => Err(type_mismatch(op, "map value")),
    }
}

/// Applies `op` at `node` under the conflict rules of the node's type.
///
/// `node` must be the location the operation addresses: the counter or
/// register itself, or for map inserts the map that owns the key. Returns
/// whether the state changed.
pub fn resolve_conflict(node: &mut CrdtNode, op: &Operation) -> Result<bool, CrdtError> {
    op.validate()?;
    match (node, op.kind) {
        (CrdtNode::Counter(c), CrdtKind::GCounter) => {
            let amount = op.value.as_ref().and_then(Value::as_int).unwrap_or_default();
            Ok(c.add(&op.id, amount as u64))
        }
        (CrdtNode::Register(r), CrdtKind::MvRegister) => Ok(r.assign(&op.id, op.value.as_ref())),
        (CrdtNode::Map(m), CrdtKind::CrdtMap) => {
            let key = op.path.segments().last().expect("validated non-empty");
            let entry = m
                .entries
                .entry(key.clone())
                .or_insert_with(|| MapEntry::Value(MvRegister::default()));
            match entry {
                MapEntry::Value(slot) => Ok(slot.assign(&op.id, op.value.as_ref())),
                MapEntry::Node(n) => Err(type_mismatch(op, n.kind().name())),
            }
        }
        (node, _) => Err(type_mismatch(op, node.kind().name())),
    }
}

// Canonical state encoding. Hash-based collections are written sorted.

fn encode_sorted_ids<'a>(enc: &mut Encoder<'_>, ids: impl Iterator<Item = &'a OperationId>) {
    let mut ids: Vec<_> = ids.collect();
    ids.sort_unstable();
    enc.len(ids.len());
    for id in ids {
        id.encode(enc);
    }
}

impl Encode for MvRegister {
    fn encode(&self, enc: &mut Encoder<'_>) {
        enc.len(self.latest.len());
        for (client, w) in &self.latest {
            enc.str(client);
            enc.u64(w.clock.0);
            enc.option(w.value.as_ref());
        }
        encode_sorted_ids(enc, self.applied.iter());
    }
}

impl Decode for MvRegister {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let len = dec.len()?;
        let mut latest = BTreeMap::new();
        for _ in 0..len {
            let client = dec.string()?;
            let clock = LamportClock(dec.u64()?);
            let value = dec.option()?;
            latest.insert(client, Write { clock, value });
        }
        let applied: Vec<OperationId> = dec.seq()?;
        Ok(Self {
            latest,
            applied: applied.into_iter().collect(),
        })
    }
}

impl Encode for CrdtNode {
    fn encode(&self, enc: &mut Encoder<'_>) {
        match self {
            CrdtNode::Counter(c) => {
                enc.u8(0);
                enc.u64(c.total);
                let mut applied: Vec<_> = c.applied.iter().collect();
                applied.sort_unstable();
                enc.len(applied.len());
                for (id, amount) in applied {
                    id.encode(enc);
                    enc.u64(*amount);
                }
            }
            CrdtNode::Map(m) => {
                enc.u8(1);
                enc.len(m.entries.len());
                for (key, entry) in &m.entries {
                    enc.str(key);
                    match entry {
                        MapEntry::Node(n) => {
                            enc.u8(0);
                            n.encode(enc);
                        }
                        MapEntry::Value(slot) => {
                            enc.u8(1);
                            slot.encode(enc);
                        }
                    }
                }
            }
            CrdtNode::Register(r) => {
                enc.u8(2);
                r.encode(enc);
            }
        }
    }
}

impl Decode for CrdtNode {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(match dec.u8()? {
            0 => {
                let total = dec.u64()?;
                let len = dec.len()?;
                let mut applied = HashMap::with_capacity(len.min(dec.remaining()));
                let mut sum = 0u64;
                for _ in 0..len {
                    let id = OperationId::decode(dec)?;
                    let amount = dec.u64()?;
                    sum = sum.wrapping_add(amount);
                    applied.insert(id, amount);
                }
                if sum != total {
                    return Err(DecodeError::Invalid("counter total disagrees with applied adds"));
                }
                CrdtNode::Counter(GCounter { total, applied })
            }
            1 => {
                let len = dec.len()?;
                let mut entries = BTreeMap::new();
                for _ in 0..len {
                    let key = dec.string()?;
                    let entry = match dec.u8()? {
                        0 => MapEntry::Node(CrdtNode::decode(dec)?),
                        1 => MapEntry::Value(MvRegister::decode(dec)?),
                        tag => return Err(DecodeError::InvalidTag { what: "map entry", tag }),
                    };
                    entries.insert(key, entry);
                }
                CrdtNode::Map(CrdtMap { entries })
            }
            2 => CrdtNode::Register(MvRegister::decode(dec)?),
            tag => return Err(DecodeError::InvalidTag { what: "crdt node", tag }),
        })
    }
}

impl Encode for CrdtObject {
    fn encode(&self, enc: &mut Encoder<'_>) {
        enc.str(&self.object_id);
        enc.option(self.root.as_ref());
    }
}

impl Decode for CrdtObject {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            object_id: dec.string()?,
            root: dec.option()?,
        })
    }
}
