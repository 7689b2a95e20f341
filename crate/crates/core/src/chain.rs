//! Append-only hash-chain log. One transaction per block.

use alloc::vec::Vec;

use crate::codec::{Decode, DecodeError, Decoder, Encode, Encoder};
use crate::crypto::{sha256, Hash32};
use crate::protocol::{Transaction, Validity};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub transaction: Transaction,
    pub prev_hash: Hash32,
    pub block_hash: Hash32,
    pub validity: Validity,
}

/// `hash(height || canonical(tx) || prev_hash || validity)`.
pub fn block_hash(height: u64, tx: &Transaction, prev_hash: &Hash32, validity: Validity) -> Hash32 {
    let mut bytes = Vec::with_capacity(512);
    let mut enc = Encoder::new(&mut bytes);
    enc.u64(height);
    tx.encode(&mut enc);
    enc.fixed(&prev_hash.0);
    enc.u8(validity.tag());
    sha256(&bytes)
}

impl Block {
    pub fn new(height: u64, transaction: Transaction, prev_hash: Hash32, validity: Validity) -> Self {
        let block_hash = block_hash(height, &transaction, &prev_hash, validity);
        Self {
            height,
            transaction,
            prev_hash,
            block_hash,
            validity,
        }
    }

    pub fn recompute_hash(&self) -> Hash32 {
        block_hash(self.height, &self.transaction, &self.prev_hash, self.validity)
    }
}

impl Encode for Block {
    fn encode(&self, enc: &mut Encoder<'_>) {
        enc.u64(self.height);
        self.transaction.encode(enc);
        self.prev_hash.encode(enc);
        self.block_hash.encode(enc);
        self.validity.encode(enc);
    }
}

impl Decode for Block {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            height: dec.u64()?,
            transaction: Transaction::decode(dec)?,
            prev_hash: Hash32::decode(dec)?,
            block_hash: Hash32::decode(dec)?,
            validity: Validity::decode(dec)?,
        })
    }
}

/// Where and why a chain failed to verify.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainBreak {
    pub height: u64,
    pub kind: BreakKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BreakKind {
    /// Stored height does not match the block's position.
    Height,
    /// `prev_hash` differs from the predecessor's `block_hash`.
    Link,
    /// `block_hash` does not recompute from the block's content.
    Content,
}

/// Checks blocks root to head and reports the first inconsistency.
pub fn verify_blocks(blocks: &[Block]) -> Result<(), ChainBreak> {
    let mut prev = Hash32::ZERO;
    for (i, block) in blocks.iter().enumerate() {
        let height = i as u64;
        let brk = |kind| ChainBreak { height, kind };
        if block.height != height {
            return Err(brk(BreakKind::Height));
        }
        if block.prev_hash != prev {
            return Err(brk(BreakKind::Link));
        }
        if block.recompute_hash() != block.block_hash {
            return Err(brk(BreakKind::Content));
        }
        prev = block.block_hash;
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct HashChain {
    blocks: Vec<Block>,
}

impl HashChain {
    pub fn new() -> Self {
        Self::default()
    }

    /// Wraps already-built blocks without checking them.
    pub fn from_blocks(blocks: Vec<Block>) -> Self {
        Self { blocks }
    }

    pub fn head_hash(&self) -> Hash32 {
        self.blocks.last().map(|b| b.block_hash).unwrap_or(Hash32::ZERO)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn get(&self, height: u64) -> Option<&Block> {
        self.blocks.get(height as usize)
    }

    pub fn append(&mut self, tx: Transaction, validity: Validity) -> &Block {
        let block = Block::new(self.blocks.len() as u64, tx, self.head_hash(), validity);
        self.blocks.push(block);
        self.blocks.last().expect("just pushed")
    }

    pub fn verify(&self) -> Result<(), ChainBreak> {
        verify_blocks(&self.blocks)
    }

    pub fn verify_chain(&self) -> bool {
        self.verify().is_ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{LamportClock, OperationId};
    use crate::crypto::Signer;
    use crate::op::Operation;
    use crate::protocol::{Endorsement, Proposal};
    use alloc::vec;

    fn tx(n: u64) -> Transaction {
        let client = Signer::derive("c", 0);
        let org = Signer::derive("o", 0);
        let ws = vec![Operation::add_value("obj", OperationId::new("c", n), ["c"], 1)];
        let p = Proposal::new(&client, LamportClock(n), "auction", "bid", vec![]);
        Transaction::assemble(&client, p, &[Endorsement::sign(&org, ws)]).unwrap()
    }

    fn chain(len: u64) -> HashChain {
        let mut c = HashChain::new();
        for i in 0..len {
            let validity = if i % 3 == 0 { Validity::Invalid } else { Validity::Valid };
            c.append(tx(i + 1), validity);
        }
        c
    }

    #[test]
    fn genesis_links_to_zero_digest() {
        let c = chain(1);
        assert_eq!(c.blocks()[0].height, 0);
        assert_eq!(c.blocks()[0].prev_hash, Hash32::ZERO);
    }

    #[test]
    fn empty_chain_verifies() {
        assert!(HashChain::new().verify_chain());
    }

    #[test]
    fn untampered_chain_verifies() {
        assert!(chain(100).verify_chain());
    }

    #[test]
    fn flipped_validity_is_detected_at_that_height() {
        let mut blocks = chain(10).blocks().to_vec();
        blocks[3].validity = match blocks[3].validity {
            Validity::Valid => Validity::Invalid,
            Validity::Invalid => Validity::Valid,
        };
        let err = verify_blocks(&blocks).unwrap_err();
        assert_eq!(err.height, 3);
        assert_eq!(err.kind, BreakKind::Content);
    }

    #[test]
    fn recomputed_block_breaks_the_next_link() {
        let mut blocks = chain(10).blocks().to_vec();
        blocks[5].transaction.write_set[0].value = Some(crate::op::Value::Int(99));
        blocks[5].block_hash = blocks[5].recompute_hash();
        let err = verify_blocks(&blocks).unwrap_err();
        assert_eq!(err, ChainBreak { height: 6, kind: BreakKind::Link });
    }

    #[test]
    fn block_roundtrips() {
        let c = chain(2);
        let b = &c.blocks()[1];
        assert_eq!(&Block::from_bytes(&b.to_bytes()).unwrap(), b);
    }
}
