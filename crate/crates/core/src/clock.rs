//! Per-client Lamport clocks and operation identifiers.
//!
//! Every client keeps its own counter and bumps it once per proposal.
//! Clocks of different clients are never compared: two operations are
//! causally ordered only when the same client issued both.

use alloc::string::String;
use core::cmp::Ordering;
use core::fmt;

use crate::codec::{Decode, DecodeError, Decoder, Encode, Encoder};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LamportClock(pub u64);

impl LamportClock {
    pub const ZERO: LamportClock = LamportClock(0);

    pub fn value(self) -> u64 {
        self.0
    }

    /// Advances the clock and returns the new value.
    pub fn tick(&mut self) -> LamportClock {
        self.0 += 1;
        *self
    }
}

impl fmt::Display for LamportClock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Identifies one modification: the issuing client plus its clock value.
///
/// The derived `Ord` (client id, then clock) is the canonical sort order
/// used when serializing state. It is not a causal order; use
/// [`OperationId::causal_cmp`] for that.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OperationId {
    pub client_id: String,
    pub clock: LamportClock,
}

impl OperationId {
    pub fn new(client_id: impl Into<String>, clock: u64) -> Self {
        Self {
            client_id: client_id.into(),
            clock: LamportClock(clock),
        }
    }

    /// Happened-before between two operations, if it can be inferred.
    ///
    /// Returns `None` for operations of different clients (concurrent).
    pub fn causal_cmp(&self, other: &OperationId) -> Option<Ordering> {
        (self.client_id == other.client_id).then(|| self.clock.cmp(&other.clock))
    }

    /// True when `self` happened strictly after `other`.
    pub fn dominates(&self, other: &OperationId) -> bool {
        self.causal_cmp(other) == Some(Ordering::Greater)
    }
}

impl fmt::Display for OperationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.client_id, self.clock)
    }
}

impl Encode for OperationId {
    fn encode(&self, enc: &mut Encoder<'_>) {
        enc.str(&self.client_id);
        enc.u64(self.clock.0);
    }
}

impl Decode for OperationId {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            client_id: dec.string()?,
            clock: LamportClock(dec.u64()?),
        })
    }
}
