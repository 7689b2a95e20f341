//! The operation model carried in write-sets.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::clock::{LamportClock, OperationId};
use crate::codec::{Decode, DecodeError, Decoder, Encode, Encoder};

/// Scalar payload of an operation.
///
/// Numbers are 64-bit integers and everything else is an opaque byte
/// string, so state digests never depend on floating point formatting.
/// The derived order is only used for deterministic tie-breaks.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Int(i64),
    Bool(bool),
    Bytes(Vec<u8>),
}

impl Value {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(v) => Some(*v),
            _ => None,
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Bytes(v.as_bytes().to_vec())
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Bool(v) => write!(f, "{v}"),
            Value::Bytes(b) => match core::str::from_utf8(b) {
                Ok(s) => write!(f, "{s:?}"),
                Err(_) => {
                    f.write_str("0x")?;
                    for byte in b {
                        write!(f, "{byte:02x}")?;
                    }
                    Ok(())
                }
            },
        }
    }
}

impl Encode for Value {
    fn encode(&self, enc: &mut Encoder<'_>) {
        match self {
            Value::Int(v) => {
                enc.u8(0);
                enc.i64(*v);
            }
            Value::Bool(v) => {
                enc.u8(1);
                enc.bool(*v);
            }
            Value::Bytes(b) => {
                enc.u8(2);
                enc.bytes(b);
            }
        }
    }
}

impl Decode for Value {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            0 => Ok(Value::Int(dec.i64()?)),
            1 => Ok(Value::Bool(dec.bool()?)),
            2 => Ok(Value::Bytes(dec.bytes()?)),
            tag => Err(DecodeError::InvalidTag { what: "value", tag }),
        }
    }
}

/// The three supported replicated types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CrdtKind {
    GCounter,
    CrdtMap,
    MvRegister,
}

impl CrdtKind {
    pub const ALL: [CrdtKind; 3] = [CrdtKind::GCounter, CrdtKind::CrdtMap, CrdtKind::MvRegister];

    pub fn name(self) -> &'static str {
        match self {
            CrdtKind::GCounter => "gcounter",
            CrdtKind::CrdtMap => "map",
            CrdtKind::MvRegister => "mvregister",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcounter" | "g-counter" | "counter" => Some(CrdtKind::GCounter),
            "map" | "crdtmap" | "crdt-map" => Some(CrdtKind::CrdtMap),
            "mvregister" | "mv-register" | "register" => Some(CrdtKind::MvRegister),
            _ => None,
        }
    }

    fn tag(self) -> u8 {
        match self {
            CrdtKind::GCounter => 0,
            CrdtKind::CrdtMap => 1,
            CrdtKind::MvRegister => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self, DecodeError> {
        match tag {
            0 => Ok(CrdtKind::GCounter),
            1 => Ok(CrdtKind::CrdtMap),
            2 => Ok(CrdtKind::MvRegister),
            tag => Err(DecodeError::InvalidTag { what: "crdt kind", tag }),
        }
    }
}

impl fmt::Display for CrdtKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Encode for CrdtKind {
    fn encode(&self, enc: &mut Encoder<'_>) {
        enc.u8(self.tag());
    }
}

impl Decode for CrdtKind {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        CrdtKind::from_tag(dec.u8()?)
    }
}

/// Root-first sequence of map keys. The empty path addresses the root.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OperationPath(pub Vec<String>);

impl OperationPath {
    pub fn root() -> Self {
        Self(Vec::new())
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    pub fn child(&self, key: impl Into<String>) -> Self {
        let mut segments = self.0.clone();
        segments.push(key.into());
        Self(segments)
    }
}

impl<S: Into<String>, const N: usize> From<[S; N]> for OperationPath {
    fn from(segments: [S; N]) -> Self {
        Self(segments.into_iter().map(Into::into).collect())
    }
}

impl From<Vec<String>> for OperationPath {
    fn from(segments: Vec<String>) -> Self {
        Self(segments)
    }
}

impl fmt::Display for OperationPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("/")?;
        for (i, seg) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("/")?;
            }
            f.write_str(seg)?;
        }
        Ok(())
    }
}

impl Encode for OperationPath {
    fn encode(&self, enc: &mut Encoder<'_>) {
        enc.seq(&self.0);
    }
}

impl Decode for OperationPath {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self(dec.seq()?))
    }
}

/// One CRDT modification.
///
/// For [`CrdtKind::GCounter`] and [`CrdtKind::MvRegister`] the path names
/// the counter or register itself. For [`CrdtKind::CrdtMap`] the last path
/// segment is the key being inserted into the map addressed by the rest of
/// the path (`InsertValue(key, value, clock)`). A `None` value deletes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Operation {
    pub object_id: String,
    pub id: OperationId,
    pub path: OperationPath,
    pub value: Option<Value>,
    pub kind: CrdtKind,
}

impl Operation {
    /// `AddValue(value, clock)` on the counter at `path`.
    pub fn add_value(
        object_id: impl Into<String>,
        id: OperationId,
        path: impl Into<OperationPath>,
        amount: i64,
    ) -> Self {
        Self {
            object_id: object_id.into(),
            id,
            path: path.into(),
            value: Some(Value::Int(amount)),
            kind: CrdtKind::GCounter,
        }
    }

    /// `AssignValue(value, clock)` on the register at `path`; `None` deletes.
    pub fn assign_value(
        object_id: impl Into<String>,
        id: OperationId,
        path: impl Into<OperationPath>,
        value: Option<Value>,
    ) -> Self {
        Self {
            object_id: object_id.into(),
            id,
            path: path.into(),
            value,
            kind: CrdtKind::MvRegister,
        }
    }

    /// `InsertValue(key, value, clock)` into the map at `map_path`; `None` deletes.
    pub fn insert_value(
        object_id: impl Into<String>,
        id: OperationId,
        map_path: impl Into<OperationPath>,
        key: impl Into<String>,
        value: Option<Value>,
    ) -> Self {
        Self {
            object_id: object_id.into(),
            id,
            path: map_path.into().child(key),
            value,
            kind: CrdtKind::CrdtMap,
        }
    }

    pub fn clock(&self) -> LamportClock {
        self.id.clock
    }
}

impl Encode for Operation {
    fn encode(&self, enc: &mut Encoder<'_>) {
        enc.str(&self.object_id);
        self.id.encode(enc);
        self.path.encode(enc);
        enc.option(self.value.as_ref());
        self.kind.encode(enc);
    }
}

impl Decode for Operation {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            object_id: dec.string()?,
            id: OperationId::decode(dec)?,
            path: OperationPath::decode(dec)?,
            value: dec.option()?,
            kind: CrdtKind::decode(dec)?,
        })
    }
}
