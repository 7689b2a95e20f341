//! Smart contracts compiled into the node.
//!
//! A contract turns a client call into either a write-set of CRDT
//! operations or a read result. Handlers are pure: the same call with the
//! same client id and clock yields byte-identical write-sets on every
//! organization, and reads never produce operations.

mod auction;
mod synthetic;
mod voting;

pub use auction::Auction;
pub use synthetic::Synthetic;
pub use voting::Voting;

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::clock::LamportClock;
use crate::crdt::{CrdtError, CrdtObject, View};
use crate::op::{Operation, OperationPath};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContractError {
    #[error("unknown contract {0}")]
    UnknownContract(String),
    #[error("unknown function {0}")]
    UnknownFunction(String),
    #[error("bad arguments: {0}")]
    BadArguments(String),
    #[error("unknown election {0}")]
    UnknownElection(String),
    #[error("unknown party {0}")]
    UnknownParty(String),
    #[error("bid increase must be positive, got {0}")]
    NonPositiveBid(i64),
    #[error("invalid parameters: {0}")]
    InvalidParameters(&'static str),
    #[error(transparent)]
    Crdt(#[from] CrdtError),
}

/// Read access to the organization's current materialized state.
pub trait StateView {
    fn read(&self, object_id: &str, path: &OperationPath) -> View;
}

impl StateView for BTreeMap<String, CrdtObject> {
    fn read(&self, object_id: &str, path: &OperationPath) -> View {
        self.get(object_id).map_or(View::NotFound, |o| o.read(path))
    }
}

/// An empty ledger.
pub struct NoState;

impl StateView for NoState {
    fn read(&self, _object_id: &str, _path: &OperationPath) -> View {
        View::NotFound
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Invocation<'a> {
    pub client_id: &'a str,
    pub clock: LamportClock,
    pub function: &'a str,
    pub args: &'a [Vec<u8>],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContractOutput {
    WriteSet(Vec<Operation>),
    Read(View),
}

pub trait Contract: Send + Sync {
    fn id(&self) -> &str;

    /// True if `function` only reads state.
    fn is_read(&self, function: &str) -> bool;

    fn invoke(&self, call: &Invocation<'_>, state: &dyn StateView) -> Result<ContractOutput, ContractError>;
}

#[derive(Default)]
pub struct ContractRegistry {
    contracts: BTreeMap<String, Box<dyn Contract>>,
}

impl ContractRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Voting (8 elections x 8 parties), auction and synthetic contracts.
    pub fn with_defaults() -> Self {
        let mut reg = Self::new();
        reg.register(Box::new(Voting::fixture(8, 8)));
        reg.register(Box::new(Auction::new()));
        reg.register(Box::new(Synthetic::default()));
        reg
    }

    pub fn register(&mut self, contract: Box<dyn Contract>) {
        self.contracts.insert(contract.id().into(), contract);
    }

    pub fn get(&self, contract_id: &str) -> Option<&dyn Contract> {
        self.contracts.get(contract_id).map(|c| &**c)
    }

    pub fn is_read(&self, contract_id: &str, function: &str) -> bool {
        self.get(contract_id).is_some_and(|c| c.is_read(function))
    }

    /// Runs a call and checks every produced operation is well formed.
    pub fn execute(
        &self,
        contract_id: &str,
        call: &Invocation<'_>,
        state: &dyn StateView,
    ) -> Result<ContractOutput, ContractError> {
        let contract = self
            .get(contract_id)
            .ok_or_else(|| ContractError::UnknownContract(contract_id.into()))?;
        let out = contract.invoke(call, state)?;
        if let ContractOutput::WriteSet(ops) = &out {
            for op in ops {
                op.validate()?;
            }
        }
        Ok(out)
    }
}

pub(crate) fn arg_str<'a>(args: &'a [Vec<u8>], i: usize, name: &str) -> Result<&'a str, ContractError> {
    let raw = args
        .get(i)
        .ok_or_else(|| ContractError::BadArguments(alloc::format!("missing argument {name}")))?;
    core::str::from_utf8(raw)
        .map_err(|_| ContractError::BadArguments(alloc::format!("{name} is not utf-8")))
}

pub(crate) fn arg_int(args: &[Vec<u8>], i: usize, name: &str) -> Result<i64, ContractError> {
    arg_str(args, i, name)?
        .parse()
        .map_err(|_| ContractError::BadArguments(alloc::format!("{name} is not an integer")))
}

pub(crate) fn expect_args(args: &[Vec<u8>], n: usize) -> Result<(), ContractError> {
    if args.len() != n {
        return Err(ContractError::BadArguments(alloc::format!(
            "expected {n} arguments, got {}",
            args.len()
        )));
    }
    Ok(())
}
