//! Parameterized load generator contract.
//!
//! `modify` touches objects `0..obj_count` (modulo the object universe) and
//! emits `ops_per_obj` operations per object, each at its own key `k{j}` so
//! operation ids stay unique per location. `read` returns the same objects.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{arg_int, arg_str, expect_args, Contract, ContractError, ContractOutput, Invocation, StateView};
use crate::clock::{LamportClock, OperationId};
use crate::crdt::View;
use crate::op::{CrdtKind, Operation, OperationPath, Value};

#[derive(Debug, Clone)]
pub struct Synthetic {
    universe: usize,
}

impl Default for Synthetic {
    fn default() -> Self {
        Self { universe: 1024 }
    }
}

impl Synthetic {
    pub const ID: &'static str = "synthetic";

    pub fn with_universe(universe: usize) -> Self {
        assert!(universe > 0, "object universe must be non-empty");
        Self { universe }
    }

    /// Objects are typed by name so different CRDT types never collide.
    pub fn object_id(&self, kind: CrdtKind, index: usize) -> String {
        format!("synthetic-{}-{}", kind.name(), index % self.universe)
    }

    pub fn modify(
        &self,
        client_id: &str,
        clock: LamportClock,
        obj_count: usize,
        ops_per_obj: usize,
        kind: CrdtKind,
    ) -> Result<Vec<Operation>, ContractError> {
        if obj_count == 0 {
            return Err(ContractError::InvalidParameters("obj_count must be at least 1"));
        }
        if ops_per_obj == 0 {
            return Err(ContractError::InvalidParameters("ops_per_obj must be at least 1"));
        }
        let id = OperationId {
            client_id: client_id.into(),
            clock,
        };
        let stamp = Value::Int(clock.0 as i64);
        let mut ops = Vec::with_capacity(obj_count * ops_per_obj);
        for i in 0..obj_count {
            let object = self.object_id(kind, i);
            for j in 0..ops_per_obj {
                let key = format!("k{j}");
                let op = match kind {
                    CrdtKind::GCounter => Operation::add_value(object.clone(), id.clone(), [key], 1),
                    CrdtKind::MvRegister => {
                        Operation::assign_value(object.clone(), id.clone(), [key], Some(stamp.clone()))
                    }
                    CrdtKind::CrdtMap => Operation::insert_value(
                        object.clone(),
                        id.clone(),
                        OperationPath::root(),
                        key,
                        Some(stamp.clone()),
                    ),
                };
                ops.push(op);
            }
        }
        Ok(ops)
    }

    /// Views of objects `0..obj_count` keyed by object id. Indices past the
    /// universe wrap around.
    pub fn read(
        &self,
        state: &dyn StateView,
        obj_count: usize,
        kind: CrdtKind,
    ) -> Result<BTreeMap<String, View>, ContractError> {
        if obj_count == 0 {
            return Err(ContractError::InvalidParameters("obj_count must be at least 1"));
        }
        Ok((0..obj_count)
            .map(|i| {
                let id = self.object_id(kind, i);
                let view = state.read(&id, &OperationPath::root());
                (id, view)
            })
            .collect())
    }
}

fn parse_kind(args: &[Vec<u8>], i: usize) -> Result<CrdtKind, ContractError> {
    let name = arg_str(args, i, "crdt_type")?;
    CrdtKind::parse(name).ok_or_else(|| ContractError::BadArguments(format!("unknown crdt type {name}")))
}

fn parse_count(args: &[Vec<u8>], i: usize, name: &str) -> Result<usize, ContractError> {
    let v = arg_int(args, i, name)?;
    usize::try_from(v).map_err(|_| ContractError::InvalidParameters("counts must be non-negative"))
}

impl Contract for Synthetic {
    fn id(&self) -> &str {
        Self::ID
    }

    fn is_read(&self, function: &str) -> bool {
        function == "read"
    }

    fn invoke(&self, call: &Invocation<'_>, state: &dyn StateView) -> Result<ContractOutput, ContractError> {
        match call.function {
            "modify" => {
                expect_args(call.args, 3)?;
                let obj_count = parse_count(call.args, 0, "obj_count")?;
                let ops_per_obj = parse_count(call.args, 1, "ops_per_obj")?;
                let kind = parse_kind(call.args, 2)?;
                Ok(ContractOutput::WriteSet(self.modify(
                    call.client_id,
                    call.clock,
                    obj_count,
                    ops_per_obj,
                    kind,
                )?))
            }
            "read" => {
                expect_args(call.args, 2)?;
                let obj_count = parse_count(call.args, 0, "obj_count")?;
                let kind = parse_kind(call.args, 1)?;
                Ok(ContractOutput::Read(View::Map(self.read(state, obj_count, kind)?)))
            }
            other => Err(ContractError::UnknownFunction(other.into())),
        }
    }
}
