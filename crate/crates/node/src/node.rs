//! Organization server: endorsement, validation, commit and gossip.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::{Arc, Mutex};

use orderless_core::contract::{ContractOutput, ContractRegistry, Invocation};
use orderless_core::crypto::sha256;
use orderless_core::{
    validate_transaction, ContractError, Encode, Endorsement, EndorsementPolicy, Hash32, InvalidReason, Operation,
    Proposal, Receipt, Registry, Signer, Transaction, Validity, View,
};
use rand::seq::index::sample;
use rand::Rng;
use thiserror::Error;

use crate::ledger::Ledger;
use crate::message::{Request, Response};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EndorseError {
    #[error("bad client signature")]
    BadClientSignature,
    #[error("{0} is read-only")]
    ReadOnly(String),
    #[error("{0} is not a read function")]
    NotARead(String),
    #[error(transparent)]
    Contract(#[from] ContractError),
}

/// Memoized signature checks.
///
/// Validation is a pure function of the transaction bytes, the policy and
/// the roster, so nodes sharing both can share one cache. Simulations use
/// that to verify each distinct transaction once instead of once per
/// organization.
#[derive(Debug, Default)]
pub struct VerifyCache {
    txs: Mutex<HashMap<Hash32, Result<(), InvalidReason>>>,
    proposals: Mutex<HashMap<Hash32, bool>>,
}

impl VerifyCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn validate(
        &self,
        tx: &Transaction,
        policy: &EndorsementPolicy,
        registry: &Registry,
    ) -> Result<(), InvalidReason> {
        let key = sha256(&tx.to_bytes());
        if let Some(v) = self.txs.lock().expect("verify cache").get(&key) {
            return *v;
        }
        let verdict = validate_transaction(tx, policy, registry);
        self.txs.lock().expect("verify cache").insert(key, verdict);
        verdict
    }

    pub fn proposal_ok(&self, proposal: &Proposal, registry: &Registry) -> bool {
        let key = sha256(&proposal.to_bytes());
        if let Some(v) = self.proposals.lock().expect("verify cache").get(&key) {
            return *v;
        }
        let ok = proposal.verify(registry);
        self.proposals.lock().expect("verify cache").insert(key, ok);
        ok
    }
}

#[derive(Debug, Clone, Copy)]
struct CommitRecord {
    block_hash: Hash32,
    verdict: Validity,
    reason: Option<InvalidReason>,
}

/// Valid transactions each peer has not acknowledged yet, by block height.
#[derive(Debug, Default)]
struct GossipState {
    pending: BTreeMap<String, BTreeMap<u64, Hash32>>,
}

pub struct OrgNode {
    signer: Signer,
    registry: Arc<Registry>,
    policy: EndorsementPolicy,
    contracts: Arc<ContractRegistry>,
    ledger: Ledger,
    verify: Arc<VerifyCache>,
    commits: Mutex<HashMap<Hash32, CommitRecord>>,
    gossip: Mutex<GossipState>,
}

impl OrgNode {
    pub fn new(
        signer: Signer,
        registry: Arc<Registry>,
        policy: EndorsementPolicy,
        contracts: Arc<ContractRegistry>,
    ) -> Self {
        Self::with_ledger(signer, registry, policy, contracts, Ledger::in_memory(), Arc::default())
    }

    /// A node over an existing ledger. Receipts for already committed
    /// transactions are rebuilt from its blocks.
    pub fn with_ledger(
        signer: Signer,
        registry: Arc<Registry>,
        policy: EndorsementPolicy,
        contracts: Arc<ContractRegistry>,
        ledger: Ledger,
        verify: Arc<VerifyCache>,
    ) -> Self {
        let peers: BTreeMap<String, BTreeMap<u64, Hash32>> = registry
            .organizations()
            .filter(|o| o.id != signer.id())
            .map(|o| (o.id.clone(), BTreeMap::new()))
            .collect();
        let commits = ledger
            .blocks()
            .iter()
            .map(|b| {
                let reason = match b.validity {
                    Validity::Valid => None,
                    Validity::Invalid => verify.validate(&b.transaction, &policy, &registry).err(),
                };
                let record = CommitRecord {
                    block_hash: b.block_hash,
                    verdict: b.validity,
                    reason,
                };
                (b.transaction.tx_id, record)
            })
            .collect();
        Self {
            signer,
            registry,
            policy,
            contracts,
            ledger,
            verify,
            commits: Mutex::new(commits),
            gossip: Mutex::new(GossipState { pending: peers }),
        }
    }

    pub fn id(&self) -> &str {
        self.signer.id()
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn policy(&self) -> &EndorsementPolicy {
        &self.policy
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    fn execute(&self, proposal: &Proposal) -> Result<ContractOutput, EndorseError> {
        if !self.verify.proposal_ok(proposal, &self.registry) {
            return Err(EndorseError::BadClientSignature);
        }
        let call = Invocation {
            client_id: &proposal.client_id,
            clock: proposal.client_clock,
            function: &proposal.function,
            args: &proposal.args,
        };
        Ok(self.contracts.execute(&proposal.contract_id, &call, &self.ledger)?)
    }

    /// Executes the proposal against current state and signs the write-set.
    pub fn endorse(&self, proposal: &Proposal) -> Result<Endorsement, EndorseError> {
        self.endorse_with(proposal, |_| {})
    }

    /// Like [`endorse`](Self::endorse) but lets `tamper` rewrite the
    /// write-set before it is signed. Used to model faulty organizations.
    pub fn endorse_with(
        &self,
        proposal: &Proposal,
        tamper: impl FnOnce(&mut Vec<Operation>),
    ) -> Result<Endorsement, EndorseError> {
        match self.execute(proposal)? {
            ContractOutput::WriteSet(mut ws) => {
                tamper(&mut ws);
                Ok(Endorsement::sign(&self.signer, ws))
            }
            ContractOutput::Read(_) => Err(EndorseError::ReadOnly(proposal.function.clone())),
        }
    }

    /// Runs a read function.
    pub fn query(&self, proposal: &Proposal) -> Result<View, EndorseError> {
        match self.execute(proposal)? {
            ContractOutput::Read(view) => Ok(view),
            ContractOutput::WriteSet(_) => Err(EndorseError::NotARead(proposal.function.clone())),
        }
    }

    pub fn validate(&self, tx: &Transaction) -> Result<(), InvalidReason> {
        self.verify.validate(tx, &self.policy, &self.registry)
    }

    /// Commits `tx` once. Later arrivals get the receipt of the first.
    pub fn commit(&self, tx: Transaction) -> Receipt {
        self.commit_from(tx, None)
    }

    fn receipt(&self, tx_id: Hash32, r: &CommitRecord) -> Receipt {
        Receipt::sign(&self.signer, tx_id, r.block_hash, r.verdict, r.reason)
    }

    fn commit_record(&self, tx: Transaction, from_peer: Option<&str>) -> (Hash32, CommitRecord) {
        let tx_id = tx.tx_id;
        if let Some(r) = self.commits.lock().expect("commit lock").get(&tx_id).copied() {
            self.acknowledged(from_peer, r, tx_id);
            return (tx_id, r);
        }
        let verdict = self.validate(&tx);
        let mut commits = self.commits.lock().expect("commit lock");
        if let Some(r) = commits.get(&tx_id).copied() {
            drop(commits);
            self.acknowledged(from_peer, r, tx_id);
            return (tx_id, r);
        }
        let validity = if verdict.is_ok() { Validity::Valid } else { Validity::Invalid };
        let block = self
            .ledger
            .append_block(tx, validity)
            .unwrap_or_else(|e| panic!("{}: ledger append failed: {e}", self.id()));
        let record = CommitRecord {
            block_hash: block.block_hash,
            verdict: validity,
            reason: verdict.err(),
        };
        commits.insert(tx_id, record);
        drop(commits);
        if validity == Validity::Valid {
            let mut gossip = self.gossip.lock().expect("gossip lock");
            for (peer, pending) in gossip.pending.iter_mut() {
                if Some(peer.as_str()) != from_peer {
                    pending.insert(block.height, tx_id);
                }
            }
        }
        (tx_id, record)
    }

    fn acknowledged(&self, from_peer: Option<&str>, r: CommitRecord, tx_id: Hash32) {
        let (Some(peer), Validity::Valid) = (from_peer, r.verdict) else {
            return;
        };
        if let Some(pending) = self.gossip.lock().expect("gossip lock").pending.get_mut(peer) {
            pending.retain(|_, id| *id != tx_id);
        }
    }

    fn commit_from(&self, tx: Transaction, from_peer: Option<&str>) -> Receipt {
        let (tx_id, record) = self.commit_record(tx, from_peer);
        self.receipt(tx_id, &record)
    }

    /// Picks `ratio` peers uniformly and hands each every valid transaction
    /// it has not acknowledged. Peers with nothing pending are skipped.
    pub fn gossip_round(&self, ratio: usize, rng: &mut impl Rng) -> Vec<(String, Vec<Transaction>)> {
        let gossip = self.gossip.lock().expect("gossip lock");
        let peers: Vec<&String> = gossip.pending.keys().collect();
        let ratio = ratio.min(peers.len());
        let mut chosen: Vec<usize> = sample(rng, peers.len(), ratio).into_vec();
        chosen.sort_unstable();
        chosen
            .into_iter()
            .filter_map(|i| {
                let pending = &gossip.pending[peers[i]];
                if pending.is_empty() {
                    return None;
                }
                let txs = pending
                    .keys()
                    .map(|h| self.ledger.get(*h).expect("pending block exists").transaction)
                    .collect();
                Some((peers[i].clone(), txs))
            })
            .collect()
    }

    /// Commits gossiped transactions and returns the ids to acknowledge.
    pub fn on_gossip(&self, from: &str, txs: Vec<Transaction>) -> Vec<Hash32> {
        txs.into_iter().map(|tx| self.commit_record(tx, Some(from)).0).collect()
    }

    pub fn on_gossip_ack(&self, from: &str, ids: &[Hash32]) {
        if let Some(pending) = self.gossip.lock().expect("gossip lock").pending.get_mut(from) {
            let ids: HashSet<&Hash32> = ids.iter().collect();
            pending.retain(|_, id| !ids.contains(id));
        }
    }

    /// Number of transactions waiting for acknowledgment, over all peers.
    pub fn gossip_backlog(&self) -> usize {
        self.gossip.lock().expect("gossip lock").pending.values().map(BTreeMap::len).sum()
    }

    pub fn handle(&self, request: Request) -> Response {
        match request {
            Request::Propose(p) => match self.endorse(&p) {
                Ok(e) => Response::Endorsed(e),
                Err(e) => Response::Refused(e.to_string()),
            },
            Request::Query(p) => match self.query(&p) {
                Ok(v) => Response::ReadResult(v),
                Err(e) => Response::Refused(e.to_string()),
            },
            Request::Commit(tx) => Response::Receipt(self.commit(tx)),
            Request::Gossip { from, txs } => Response::GossipAck(self.on_gossip(&from, txs)),
        }
    }
}
