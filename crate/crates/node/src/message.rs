//! Wire messages between clients and organizations.

use orderless_core::codec::{Decoder, Encoder};
use orderless_core::{Decode, DecodeError, Encode, Endorsement, Hash32, Proposal, Receipt, Transaction, View};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    Propose(Proposal),
    /// A read-only call, answered from the organization's cache.
    Query(Proposal),
    Commit(Transaction),
    Gossip { from: String, txs: Vec<Transaction> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Endorsed(Endorsement),
    Refused(String),
    ReadResult(View),
    Receipt(Receipt),
    GossipAck(Vec<Hash32>),
}

impl Encode for Request {
    fn encode(&self, enc: &mut Encoder<'_>) {
        match self {
            Request::Propose(p) => {
                enc.u8(0);
                p.encode(enc);
            }
            Request::Query(p) => {
                enc.u8(1);
                p.encode(enc);
            }
            Request::Commit(tx) => {
                enc.u8(2);
                tx.encode(enc);
            }
            Request::Gossip { from, txs } => {
                enc.u8(3);
                enc.str(from);
                enc.seq(txs);
            }
        }
    }
}

impl Decode for Request {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(match dec.u8()? {
            0 => Request::Propose(Proposal::decode(dec)?),
            1 => Request::Query(Proposal::decode(dec)?),
            2 => Request::Commit(Transaction::decode(dec)?),
            3 => Request::Gossip {
                from: dec.string()?,
                txs: dec.seq()?,
            },
            tag => return Err(DecodeError::InvalidTag { what: "request", tag }),
        })
    }
}

impl Encode for Response {
    fn encode(&self, enc: &mut Encoder<'_>) {
        match self {
            Response::Endorsed(e) => {
                enc.u8(0);
                e.encode(enc);
            }
            Response::Refused(why) => {
                enc.u8(1);
                enc.str(why);
            }
            Response::ReadResult(v) => {
                enc.u8(2);
                v.encode(enc);
            }
            Response::Receipt(r) => {
                enc.u8(3);
                r.encode(enc);
            }
            Response::GossipAck(ids) => {
                enc.u8(4);
                enc.seq(ids);
            }
        }
    }
}

impl Decode for Response {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(match dec.u8()? {
            0 => Response::Endorsed(Endorsement::decode(dec)?),
            1 => Response::Refused(dec.string()?),
            2 => Response::ReadResult(View::decode(dec)?),
            3 => Response::Receipt(Receipt::decode(dec)?),
            4 => Response::GossipAck(dec.seq()?),
            tag => return Err(DecodeError::InvalidTag { what: "response", tag }),
        })
    }
}
