//! Auctions as maps of bidder -> grow-only counter of cumulative bids.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{arg_int, arg_str, expect_args, Contract, ContractError, ContractOutput, Invocation, StateView};
use crate::clock::{LamportClock, OperationId};
use crate::crdt::View;
use crate::op::{Operation, OperationPath, Value};

#[derive(Debug, Default)]
pub struct Auction;

impl Auction {
    pub const ID: &'static str = "auction";

    pub fn new() -> Self {
        Self
    }

    /// A single counter increment at `[bidder]` in the auction object.
    pub fn bid(
        &self,
        bidder_id: &str,
        clock: LamportClock,
        bid_increase: i64,
        auction_id: &str,
    ) -> Result<Vec<Operation>, ContractError> {
        if bid_increase <= 0 {
            return Err(ContractError::NonPositiveBid(bid_increase));
        }
        Ok(vec![Operation::add_value(
            auction_id,
            OperationId {
                client_id: bidder_id.into(),
                clock,
            },
            [bidder_id],
            bid_increase,
        )])
    }

    /// Cumulative bid per bidder.
    pub fn totals(&self, state: &dyn StateView, auction_id: &str) -> BTreeMap<String, u64> {
        let View::Map(bidders) = state.read(auction_id, &OperationPath::root()) else {
            return BTreeMap::new();
        };
        bidders
            .into_iter()
            .filter_map(|(bidder, v)| v.as_counter().map(|c| (bidder, c)))
            .collect()
    }

    /// Highest cumulative bid; ties go to the lexicographically smallest
    /// bidder id. `None` for an auction without bids.
    pub fn get_highest_bid(&self, state: &dyn StateView, auction_id: &str) -> Option<(String, u64)> {
        // BTreeMap iterates bidders in ascending order, so keeping the first
        // maximum implements the tie-break.
        self.totals(state, auction_id)
            .into_iter()
            .fold(None, |best, (bidder, amount)| match best {
                Some((_, top)) if top >= amount => best,
                _ => Some((bidder, amount)),
            })
    }
}

impl Contract for Auction {
    fn id(&self) -> &str {
        Self::ID
    }

    fn is_read(&self, function: &str) -> bool {
        function == "get_highest_bid"
    }

    fn invoke(&self, call: &Invocation<'_>, state: &dyn StateView) -> Result<ContractOutput, ContractError> {
        match call.function {
            "bid" => {
                expect_args(call.args, 2)?;
                let increase = arg_int(call.args, 0, "bid_increase")?;
                let auction = arg_str(call.args, 1, "auction")?;
                Ok(ContractOutput::WriteSet(self.bid(call.client_id, call.clock, increase, auction)?))
            }
            "get_highest_bid" => {
                expect_args(call.args, 1)?;
                let auction = arg_str(call.args, 0, "auction")?;
                Ok(ContractOutput::Read(match self.get_highest_bid(state, auction) {
                    None => View::NotFound,
                    Some((bidder, amount)) => {
                        View::Map(BTreeMap::from([(bidder, View::Value(Value::Int(amount as i64)))]))
                    }
                }))
            }
            other => Err(ContractError::UnknownFunction(other.into())),
        }
    }
}
