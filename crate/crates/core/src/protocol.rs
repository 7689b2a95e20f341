//! Messages of the execute-commit lifecycle and transaction validation.
//!
//! A client signs a [`Proposal`]; organizations execute it and answer with an
//! [`Endorsement`] (the write-set plus a signature over its digest); the
//! client checks the write-sets are byte-identical, assembles a
//! [`Transaction`] and signs the same digest; organizations validate and
//! commit it and answer with a signed [`Receipt`].

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::clock::LamportClock;
use crate::codec::{Decode, DecodeError, Decoder, Encode, Encoder};
use crate::crypto::{sha256, sha256_parts, Hash32, Role, Signature, SignatureVerifier, Signer};
use crate::op::Operation;

/// `{q of n}`: a transaction needs q endorsements and q commits out of n
/// organizations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EndorsementPolicy {
    q: usize,
    n: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid endorsement policy {{{q} of {n}}}: need 0 < q <= n")]
pub struct PolicyError {
    pub q: usize,
    pub n: usize,
}

impl EndorsementPolicy {
    pub fn new(q: usize, n: usize) -> Result<Self, PolicyError> {
        if q == 0 || q > n {
            return Err(PolicyError { q, n });
        }
        Ok(Self { q, n })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Largest number of Byzantine organizations that cannot get an
    /// invalid transaction committed (q >= f + 1).
    pub fn safety_tolerance(&self) -> usize {
        self.q - 1
    }

    /// Largest number of silent organizations that cannot block progress
    /// (n - q >= f).
    pub fn liveness_tolerance(&self) -> usize {
        self.n - self.q
    }
}

impl fmt::Display for EndorsementPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{} of {}}}", self.q, self.n)
    }
}

pub fn write_set_bytes(write_set: &[Operation]) -> Vec<u8> {
    let mut out = Vec::new();
    Encoder::new(&mut out).seq(write_set);
    out
}

pub fn write_set_digest(write_set: &[Operation]) -> Hash32 {
    sha256(&write_set_bytes(write_set))
}

/// A client's request to execute a contract function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proposal {
    pub proposal_id: Hash32,
    pub client_id: String,
    pub client_clock: LamportClock,
    pub contract_id: String,
    pub function: String,
    pub args: Vec<Vec<u8>>,
    pub client_signature: Signature,
}

fn proposal_body(
    client_id: &str,
    clock: LamportClock,
    contract_id: &str,
    function: &str,
    args: &[Vec<u8>],
) -> Vec<u8> {
    let mut out = Vec::new();
    let mut enc = Encoder::new(&mut out);
    enc.str(client_id);
    enc.u64(clock.0);
    enc.str(contract_id);
    enc.str(function);
    enc.seq(args);
    out
}

impl Proposal {
    pub fn new(
        client: &Signer,
        clock: LamportClock,
        contract_id: impl Into<String>,
        function: impl Into<String>,
        args: Vec<Vec<u8>>,
    ) -> Self {
        let contract_id = contract_id.into();
        let function = function.into();
        let body = proposal_body(client.id(), clock, &contract_id, &function, &args);
        let (proposal_id, client_signature) = client.hash_and_sign(&body);
        Self {
            proposal_id,
            client_id: client.id().into(),
            client_clock: clock,
            contract_id,
            function,
            args,
            client_signature,
        }
    }

    fn body(&self) -> Vec<u8> {
        proposal_body(
            &self.client_id,
            self.client_clock,
            &self.contract_id,
            &self.function,
            &self.args,
        )
    }

    /// Checks the id matches the content and the client signed it.
    pub fn verify(&self, verifier: &dyn SignatureVerifier) -> bool {
        sha256(&self.body()) == self.proposal_id
            && verifier.role_of(&self.client_id) == Some(Role::Client)
            && verifier.verify_digest(&self.client_id, &self.proposal_id, &self.client_signature)
    }
}

impl Encode for Proposal {
    fn encode(&self, enc: &mut Encoder<'_>) {
        self.proposal_id.encode(enc);
        enc.str(&self.client_id);
        enc.u64(self.client_clock.0);
        enc.str(&self.contract_id);
        enc.str(&self.function);
        enc.seq(&self.args);
        self.client_signature.encode(enc);
    }
}

impl Decode for Proposal {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            proposal_id: Hash32::decode(dec)?,
            client_id: dec.string()?,
            client_clock: LamportClock(dec.u64()?),
            contract_id: dec.string()?,
            function: dec.string()?,
            args: dec.seq()?,
            client_signature: Signature::decode(dec)?,
        })
    }
}

/// An organization's signed execution result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Endorsement {
    pub org_id: String,
    pub write_set: Vec<Operation>,
    pub write_set_digest: Hash32,
    pub org_signature: Signature,
}

impl Endorsement {
    pub fn sign(org: &Signer, write_set: Vec<Operation>) -> Self {
        let (write_set_digest, org_signature) = org.hash_and_sign(&write_set_bytes(&write_set));
        Self {
            org_id: org.id().into(),
            write_set,
            write_set_digest,
            org_signature,
        }
    }

    /// The digest recomputes from the write-set and the organization signed it.
    pub fn verify(&self, verifier: &dyn SignatureVerifier) -> bool {
        write_set_digest(&self.write_set) == self.write_set_digest
            && verifier.role_of(&self.org_id) == Some(Role::Organization)
            && verifier.verify_digest(&self.org_id, &self.write_set_digest, &self.org_signature)
    }

    pub fn signature_part(&self) -> EndorsementSignature {
        EndorsementSignature {
            org_id: self.org_id.clone(),
            write_set_digest: self.write_set_digest,
            org_signature: self.org_signature.clone(),
        }
    }
}

impl Encode for Endorsement {
    fn encode(&self, enc: &mut Encoder<'_>) {
        enc.str(&self.org_id);
        enc.seq(&self.write_set);
        self.write_set_digest.encode(enc);
        self.org_signature.encode(enc);
    }
}

impl Decode for Endorsement {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            org_id: dec.string()?,
            write_set: dec.seq()?,
            write_set_digest: Hash32::decode(dec)?,
            org_signature: Signature::decode(dec)?,
        })
    }
}

/// An endorsement as embedded in a transaction. The write-set itself is
/// carried once, by the transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndorsementSignature {
    pub org_id: String,
    pub write_set_digest: Hash32,
    pub org_signature: Signature,
}

impl Encode for EndorsementSignature {
    fn encode(&self, enc: &mut Encoder<'_>) {
        enc.str(&self.org_id);
        self.write_set_digest.encode(enc);
        self.org_signature.encode(enc);
    }
}

impl Decode for EndorsementSignature {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            org_id: dec.string()?,
            write_set_digest: Hash32::decode(dec)?,
            org_signature: Signature::decode(dec)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssembleError {
    #[error("no endorsements to assemble")]
    NoEndorsements,
    /// Write-sets differ. Carries the organizations outside the largest
    /// group of byte-identical write-sets (all of them on a tie).
    #[error("endorsement write-sets differ")]
    EndorsementMismatch { implicated: Vec<String> },
}

/// A client-signed bundle of a write-set and its endorsements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub tx_id: Hash32,
    pub proposal: Proposal,
    pub write_set: Vec<Operation>,
    pub endorsements: Vec<EndorsementSignature>,
    pub client_signature: Signature,
}

pub fn transaction_id(proposal: &Proposal, write_set_digest: &Hash32) -> Hash32 {
    sha256_parts(&[&proposal.to_bytes(), &write_set_digest.0])
}

impl Transaction {
    /// Checks the endorsements agree byte-for-byte and signs the result.
    pub fn assemble(
        client: &Signer,
        proposal: Proposal,
        endorsements: &[Endorsement],
    ) -> Result<Self, AssembleError> {
        let first = endorsements.first().ok_or(AssembleError::NoEndorsements)?;
        let ws_bytes = write_set_bytes(&first.write_set);
        let all_match = endorsements[1..]
            .iter()
            .all(|e| e.write_set == first.write_set);
        if !all_match {
            return Err(AssembleError::EndorsementMismatch {
                implicated: implicate_minority(endorsements),
            });
        }
        let digest = sha256(&ws_bytes);
        Ok(Self {
            tx_id: transaction_id(&proposal, &digest),
            client_signature: client.sign_digest(&digest),
            proposal,
            write_set: first.write_set.clone(),
            endorsements: endorsements.iter().map(Endorsement::signature_part).collect(),
        })
    }

    /// Assembles without checking agreement; lets tests and adversarial
    /// clients build whatever they like.
    pub fn assemble_unchecked(
        client: &Signer,
        proposal: Proposal,
        write_set: Vec<Operation>,
        endorsements: Vec<EndorsementSignature>,
    ) -> Self {
        let digest = write_set_digest(&write_set);
        Self {
            tx_id: transaction_id(&proposal, &digest),
            client_signature: client.sign_digest(&digest),
            proposal,
            write_set,
            endorsements,
        }
    }

    pub fn write_set_digest(&self) -> Hash32 {
        write_set_digest(&self.write_set)
    }
}

/// Organizations whose write-set is not in the unique largest group of
/// identical write-sets. On a tie for largest every endorser is implicated.
fn implicate_minority(endorsements: &[Endorsement]) -> Vec<String> {
    let mut groups: Vec<(&[Operation], Vec<&str>)> = Vec::new();
    for e in endorsements {
        match groups.iter_mut().find(|(ws, _)| *ws == e.write_set.as_slice()) {
            Some((_, orgs)) => orgs.push(&e.org_id),
            None => groups.push((&e.write_set, alloc::vec![e.org_id.as_str()])),
        }
    }
    let largest = groups.iter().map(|(_, o)| o.len()).max().unwrap_or(0);
    let winners = groups.iter().filter(|(_, o)| o.len() == largest).count();
    groups
        .iter()
        .filter(|(_, o)| winners > 1 || o.len() < largest)
        .flat_map(|(_, o)| o.iter().map(|s| String::from(*s)))
        .collect()
}

impl Encode for Transaction {
    fn encode(&self, enc: &mut Encoder<'_>) {
        self.tx_id.encode(enc);
        self.proposal.encode(enc);
        enc.seq(&self.write_set);
        enc.seq(&self.endorsements);
        self.client_signature.encode(enc);
    }
}

impl Decode for Transaction {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            tx_id: Hash32::decode(dec)?,
            proposal: Proposal::decode(dec)?,
            write_set: dec.seq()?,
            endorsements: dec.seq()?,
            client_signature: Signature::decode(dec)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Validity {
    Valid,
    Invalid,
}

impl Validity {
    pub fn tag(self) -> u8 {
        match self {
            Validity::Valid => 1,
            Validity::Invalid => 0,
        }
    }
}

impl Encode for Validity {
    fn encode(&self, enc: &mut Encoder<'_>) {
        enc.u8(self.tag());
    }
}

impl Decode for Validity {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            1 => Ok(Validity::Valid),
            0 => Ok(Validity::Invalid),
            tag => Err(DecodeError::InvalidTag { what: "validity", tag }),
        }
    }
}

/// Why a transaction was judged invalid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InvalidReason {
    PolicyUnsatisfied,
    BadEndorsementSig,
    BadClientSig,
    DigestMismatch,
    DuplicateEndorser,
}

impl InvalidReason {
    pub const ALL: [InvalidReason; 5] = [
        InvalidReason::PolicyUnsatisfied,
        InvalidReason::BadEndorsementSig,
        InvalidReason::BadClientSig,
        InvalidReason::DigestMismatch,
        InvalidReason::DuplicateEndorser,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InvalidReason::PolicyUnsatisfied => "policy_unsatisfied",
            InvalidReason::BadEndorsementSig => "bad_endorsement_sig",
            InvalidReason::BadClientSig => "bad_client_sig",
            InvalidReason::DigestMismatch => "digest_mismatch",
            InvalidReason::DuplicateEndorser => "duplicate_endorser",
        }
    }

    fn tag(self) -> u8 {
        match self {
            InvalidReason::PolicyUnsatisfied => 0,
            InvalidReason::BadEndorsementSig => 1,
            InvalidReason::BadClientSig => 2,
            InvalidReason::DigestMismatch => 3,
            InvalidReason::DuplicateEndorser => 4,
        }
    }
}

impl fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Encode for InvalidReason {
    fn encode(&self, enc: &mut Encoder<'_>) {
        enc.u8(self.tag());
    }
}

impl Decode for InvalidReason {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let tag = dec.u8()?;
        InvalidReason::ALL
            .into_iter()
            .find(|r| r.tag() == tag)
            .ok_or(DecodeError::InvalidTag { what: "invalid reason", tag })
    }
}

/// Checks signature validity of a transaction against the policy.
///
/// Valid iff every endorsement covers the transaction's write-set digest,
/// at least `q` distinct registered organizations signed it, and the client
/// signed both the proposal and the write-set digest.
pub fn validate_transaction(
    tx: &Transaction,
    policy: &EndorsementPolicy,
    verifier: &dyn SignatureVerifier,
) -> Result<(), InvalidReason> {
    let digest = tx.write_set_digest();
    if transaction_id(&tx.proposal, &digest) != tx.tx_id {
        return Err(InvalidReason::DigestMismatch);
    }
    if tx.endorsements.iter().any(|e| e.write_set_digest != digest) {
        return Err(InvalidReason::DigestMismatch);
    }
    let mut endorsers = BTreeSet::new();
    if !tx.endorsements.iter().all(|e| endorsers.insert(e.org_id.as_str())) {
        return Err(InvalidReason::DuplicateEndorser);
    }
    for e in &tx.endorsements {
        if verifier.role_of(&e.org_id) != Some(Role::Organization)
            || !verifier.verify_digest(&e.org_id, &digest, &e.org_signature)
        {
            return Err(InvalidReason::BadEndorsementSig);
        }
    }
    if !tx.proposal.verify(verifier)
        || !verifier.verify_digest(&tx.proposal.client_id, &digest, &tx.client_signature)
    {
        return Err(InvalidReason::BadClientSig);
    }
    if endorsers.len() < policy.q() {
        return Err(InvalidReason::PolicyUnsatisfied);
    }
    Ok(())
}

/// An organization's signed answer to a commit request: the hash of the
/// block holding the transaction and the verdict.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Receipt {
    pub tx_id: Hash32,
    pub org_id: String,
    pub block_hash: Hash32,
    pub verdict: Validity,
    pub reason: Option<InvalidReason>,
    pub org_signature: Signature,
}

fn receipt_digest(block_hash: &Hash32, verdict: Validity) -> Hash32 {
    sha256_parts(&[&block_hash.0, &[verdict.tag()]])
}

impl Receipt {
    pub fn sign(
        org: &Signer,
        tx_id: Hash32,
        block_hash: Hash32,
        verdict: Validity,
        reason: Option<InvalidReason>,
    ) -> Self {
        Self {
            tx_id,
            org_id: org.id().into(),
            block_hash,
            verdict,
            reason,
            org_signature: org.sign_digest(&receipt_digest(&block_hash, verdict)),
        }
    }

    pub fn verify(&self, verifier: &dyn SignatureVerifier) -> bool {
        verifier.role_of(&self.org_id) == Some(Role::Organization)
            && verifier.verify_digest(
                &self.org_id,
                &receipt_digest(&self.block_hash, self.verdict),
                &self.org_signature,
            )
    }
}

impl Encode for Receipt {
    fn encode(&self, enc: &mut Encoder<'_>) {
        self.tx_id.encode(enc);
        enc.str(&self.org_id);
        self.block_hash.encode(enc);
        self.verdict.encode(enc);
        enc.option(self.reason.as_ref());
        self.org_signature.encode(enc);
    }
}

impl Decode for Receipt {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            tx_id: Hash32::decode(dec)?,
            org_id: dec.string()?,
            block_hash: Hash32::decode(dec)?,
            verdict: Validity::decode(dec)?,
            reason: dec.option()?,
            org_signature: Signature::decode(dec)?,
        })
    }
}
