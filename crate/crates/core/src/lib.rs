//! Coordination-free permissioned ledger core.
//!
//! Everything here is `no_std` (with `alloc`): the CRDT engine, the
//! canonical binary codec, Ed25519 identities, endorsement and transaction
//! validation, the per-organization hash chain, and the built-in contracts.
//! Networking, persistence and simulation live in the `orderless` crate.

#![no_std]

extern crate alloc;

pub mod chain;
pub mod clock;
pub mod codec;
pub mod contract;
pub mod crdt;
pub mod crypto;
pub mod op;
pub mod protocol;

pub use chain::{verify_blocks, Block, BreakKind, ChainBreak, HashChain};
pub use clock::{LamportClock, OperationId};
pub use codec::{Decode, DecodeError, Encode};
pub use contract::{Contract, ContractError, ContractOutput, ContractRegistry, Invocation, StateView};
pub use crdt::{CrdtError, CrdtNode, CrdtObject, View};
pub use crypto::{sha256, Hash32, Identity, IdentityError, Registry, Role, Signature, SignatureVerifier, Signer};
pub use op::{CrdtKind, Operation, OperationPath, Value};
pub use protocol::{
    validate_transaction, AssembleError, Endorsement, EndorsementPolicy, InvalidReason, Proposal, Receipt,
    Transaction, Validity,
};
