//! Elections as maps of party -> voter -> multi-value register.
//!
//! A vote writes `true` under the chosen party and `false` under every
//! other party of the election, all stamped with the voter's clock. A later
//! vote of the same voter therefore overwrites every register the earlier
//! one touched, whatever order they are applied in, and each voter counts
//! for at most one party.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{arg_str, expect_args, Contract, ContractError, ContractOutput, Invocation, StateView};
use crate::clock::{LamportClock, OperationId};
use crate::crdt::View;
use crate::op::{Operation, OperationPath, Value};

pub struct Voting {
    elections: BTreeMap<String, Vec<String>>,
}

impl Voting {
    pub const ID: &'static str = "voting";

    pub fn new(elections: BTreeMap<String, Vec<String>>) -> Self {
        Self { elections }
    }

    /// `election-{i}` with parties `party-{j}`.
    pub fn fixture(elections: usize, parties: usize) -> Self {
        Self::new(
            (0..elections)
                .map(|e| {
                    (
                        format!("election-{e}"),
                        (0..parties).map(|p| format!("party-{p}")).collect(),
                    )
                })
                .collect(),
        )
    }

    pub fn elections(&self) -> impl Iterator<Item = (&String, &Vec<String>)> {
        self.elections.iter()
    }

    fn parties(&self, election_id: &str) -> Result<&[String], ContractError> {
        self.elections
            .get(election_id)
            .map(Vec::as_slice)
            .ok_or_else(|| ContractError::UnknownElection(election_id.into()))
    }

    fn check_party(&self, party_id: &str, election_id: &str) -> Result<(), ContractError> {
        if self.parties(election_id)?.iter().any(|p| p == party_id) {
            Ok(())
        } else {
            Err(ContractError::UnknownParty(party_id.into()))
        }
    }

    /// One register assignment per party of the election.
    pub fn vote(
        &self,
        voter_id: &str,
        clock: LamportClock,
        party_id: &str,
        election_id: &str,
    ) -> Result<Vec<Operation>, ContractError> {
        self.check_party(party_id, election_id)?;
        let id = OperationId {
            client_id: voter_id.into(),
            clock,
        };
        Ok(self
            .parties(election_id)?
            .iter()
            .map(|p| {
                Operation::assign_value(
                    election_id,
                    id.clone(),
                    OperationPath::from([p.as_str(), voter_id]),
                    Some(Value::Bool(p == party_id)),
                )
            })
            .collect())
    }

    /// Voters whose register under `party_id` holds exactly `{true}`.
    ///
    /// A register with concurrent `true` and `false` survivors (one voter
    /// voting from two sessions) does not count.
    pub fn read_vote_count(
        &self,
        state: &dyn StateView,
        party_id: &str,
        election_id: &str,
    ) -> Result<u64, ContractError> {
        self.check_party(party_id, election_id)?;
        let View::Map(voters) = state.read(election_id, &OperationPath::from([party_id])) else {
            return Ok(0);
        };
        Ok(voters
            .values()
            .filter(|v| matches!(v, View::Register(vals) if vals.as_slice() == [Value::Bool(true)]))
            .count() as u64)
    }
}

impl Contract for Voting {
    fn id(&self) -> &str {
        Self::ID
    }

    fn is_read(&self, function: &str) -> bool {
        function == "read_vote_count"
    }

    fn invoke(&self, call: &Invocation<'_>, state: &dyn StateView) -> Result<ContractOutput, ContractError> {
        match call.function {
            "vote" => {
                expect_args(call.args, 2)?;
                let party = arg_str(call.args, 0, "party")?;
                let election = arg_str(call.args, 1, "election")?;
                Ok(ContractOutput::WriteSet(self.vote(call.client_id, call.clock, party, election)?))
            }
            "read_vote_count" => {
                expect_args(call.args, 2)?;
                let party = arg_str(call.args, 0, "party")?;
                let election = arg_str(call.args, 1, "election")?;
                let count = self.read_vote_count(state, party, election)?;
                Ok(ContractOutput::Read(View::Value(Value::Int(count as i64))))
            }
            other => Err(ContractError::UnknownFunction(other.into())),
        }
    }
}
