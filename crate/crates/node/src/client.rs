//! Client side of the two-phase lifecycle.
//!
//! [`Submission`] is an I/O-free state machine: it consumes responses and
//! timer expiries and emits [`Command`]s for whoever drives it. The
//! simulator drives it from its event queue; [`submit`] drives it over any
//! blocking [`OrgTransport`].

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use orderless_core::{
    AssembleError, Endorsement, EndorsementPolicy, Hash32, InvalidReason, LamportClock, Proposal, Receipt, Registry,
    Signer, Transaction, Validity, View,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::message::{Request, Response};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Call {
    pub contract_id: String,
    pub function: String,
    pub args: Vec<Vec<u8>>,
}

impl Call {
    pub fn new(contract_id: &str, function: &str, args: &[&str]) -> Self {
        Self {
            contract_id: contract_id.into(),
            function: function.into(),
            args: args.iter().map(|a| a.as_bytes().to_vec()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Failure {
    #[error("endorsement write-sets differ")]
    EndorsementMismatch { implicated: Vec<String> },
    #[error("no response from {silent:?}")]
    Timeout { silent: Vec<String> },
    #[error("rejected: {0:?}")]
    Rejected(Vec<(String, Option<InvalidReason>)>),
    #[error("refused: {0}")]
    Refused(String),
    #[error("fewer than q unsuspected organizations left")]
    Exhausted,
}

impl Failure {
    pub fn implicated(&self) -> &[String] {
        match self {
            Failure::EndorsementMismatch { implicated } => implicated,
            Failure::Timeout { silent } => silent,
            _ => &[],
        }
    }

    /// Failures that avoiding organizations can fix.
    pub fn retryable(&self) -> bool {
        matches!(self, Failure::EndorsementMismatch { .. } | Failure::Timeout { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Failure::EndorsementMismatch { .. } => "endorsement_mismatch",
            Failure::Timeout { .. } => "timeout",
            Failure::Rejected(_) => "rejected",
            Failure::Refused(_) => "refused",
            Failure::Exhausted => "exhausted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Committed(Vec<Receipt>),
    Read(Vec<(String, View)>),
    Failed(Failure),
}

impl Outcome {
    pub fn is_success(&self) -> bool {
        !matches!(self, Outcome::Failed(_))
    }
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    /// An organization implicated this many times is no longer contacted.
    pub suspicion_threshold: u32,
    pub endorse_timeout: Duration,
    pub receipt_timeout: Duration,
    /// Attempts per logical call, counting the first.
    pub max_attempts: u32,
    pub auto_retry: bool,
    pub verify_signatures: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            suspicion_threshold: 1,
            endorse_timeout: Duration::from_secs(5),
            receipt_timeout: Duration::from_secs(10),
            max_attempts: 32,
            auto_retry: true,
            verify_signatures: true,
        }
    }
}

pub struct ClientSession {
    signer: Signer,
    clock: LamportClock,
    roster: Vec<String>,
    policy: EndorsementPolicy,
    registry: Arc<Registry>,
    suspicion: BTreeMap<String, u32>,
    config: SessionConfig,
    rng: ChaCha8Rng,
}

impl ClientSession {
    pub fn new(
        signer: Signer,
        registry: Arc<Registry>,
        policy: EndorsementPolicy,
        config: SessionConfig,
        seed: u64,
    ) -> Self {
        let roster = registry.organizations().map(|o| o.id.clone()).collect();
        Self {
            signer,
            clock: LamportClock::ZERO,
            roster,
            policy,
            registry,
            suspicion: BTreeMap::new(),
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn id(&self) -> &str {
        self.signer.id()
    }

    pub fn signer(&self) -> &Signer {
        &self.signer
    }

    pub fn clock(&self) -> LamportClock {
        self.clock
    }

    pub fn policy(&self) -> &EndorsementPolicy {
        &self.policy
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn suspicion(&self, org: &str) -> u32 {
        self.suspicion.get(org).copied().unwrap_or(0)
    }

    /// Signs a proposal for `call` under the next clock value.
    pub fn propose(&mut self, call: &Call) -> Proposal {
        let clock = self.clock.tick();
        Proposal::new(&self.signer, clock, &call.contract_id, &call.function, call.args.clone())
    }

    fn unsuspected(&self) -> Vec<&String> {
        self.roster
            .iter()
            .filter(|o| self.suspicion(o) < self.config.suspicion_threshold)
            .collect()
    }

    /// `q` organizations, least suspected first, ties broken at random.
    pub fn select_targets(&mut self) -> Result<Vec<String>, Failure> {
        self.select_from(&BTreeSet::new(), self.policy.q())
    }

    fn select_from(&mut self, exclude: &BTreeSet<String>, count: usize) -> Result<Vec<String>, Failure> {
        let mut candidates: Vec<String> = self
            .unsuspected()
            .into_iter()
            .filter(|o| !exclude.contains(*o))
            .cloned()
            .collect();
        if candidates.len() < count {
            return Err(Failure::Exhausted);
        }
        candidates.shuffle(&mut self.rng);
        candidates.sort_by_key(|o| self.suspicion(o));
        candidates.truncate(count);
        Ok(candidates)
    }

    pub fn suspect(&mut self, orgs: &[String]) {
        for o in orgs {
            *self.suspicion.entry(o.clone()).or_default() += 1;
        }
    }

    /// Records the organizations a failure implicates and picks a fresh
    /// endorsement set. The caller resubmits under a new clock value.
    pub fn avoid_and_retry(&mut self, failure: &Failure) -> Result<Vec<String>, Failure> {
        self.suspect(failure.implicated());
        self.select_targets()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Propose { to: Vec<String>, proposal: Proposal },
    Query { to: Vec<String>, proposal: Proposal },
    Commit { to: Vec<String>, tx: Transaction },
    StartTimer { token: u64, after: Duration },
    Finished(Outcome),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Endorsing,
    Reading,
    Committing,
    Done,
}

/// One logical call in flight, including its retries.
#[derive(Debug)]
pub struct Submission {
    call: Call,
    read: bool,
    proposal: Option<Proposal>,
    targets: Vec<String>,
    endorsements: BTreeMap<String, Endorsement>,
    refused: BTreeSet<String>,
    reads: BTreeMap<String, View>,
    tx: Option<Transaction>,
    commit_targets: BTreeSet<String>,
    receipts: BTreeMap<String, Receipt>,
    attempts: u32,
    token: u64,
    phase: Phase,
    outcome: Option<Outcome>,
}

impl Submission {
    /// Starts a write (`read == false`) or read call.
    pub fn begin(session: &mut ClientSession, call: Call, read: bool) -> (Self, Vec<Command>) {
        let mut sub = Self {
            call,
            read,
            proposal: None,
            targets: Vec::new(),
            endorsements: BTreeMap::new(),
            refused: BTreeSet::new(),
            reads: BTreeMap::new(),
            tx: None,
            commit_targets: BTreeSet::new(),
            receipts: BTreeMap::new(),
            attempts: 0,
            token: 0,
            phase: Phase::Endorsing,
            outcome: None,
        };
        let cmds = match session.select_targets() {
            Ok(targets) => sub.attempt(session, targets),
            Err(f) => sub.finish(Outcome::Failed(f)),
        };
        (sub, cmds)
    }

    pub fn call(&self) -> &Call {
        &self.call
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn attempts(&self) -> u32 {
        self.attempts
    }

    pub fn outcome(&self) -> Option<&Outcome> {
        self.outcome.as_ref()
    }

    pub fn proposal_id(&self) -> Option<Hash32> {
        self.proposal.as_ref().map(|p| p.proposal_id)
    }

    pub fn tx_id(&self) -> Option<Hash32> {
        self.tx.as_ref().map(|t| t.tx_id)
    }

    pub fn token(&self) -> u64 {
        self.token
    }

    fn attempt(&mut self, session: &mut ClientSession, targets: Vec<String>) -> Vec<Command> {
        self.attempts += 1;
        self.token += 1;
        let proposal = session.propose(&self.call);
        self.endorsements.clear();
        self.refused.clear();
        self.reads.clear();
        self.targets = targets.clone();
        self.proposal = Some(proposal.clone());
        let (send, phase) = if self.read {
            (Command::Query { to: targets, proposal }, Phase::Reading)
        } else {
            (Command::Propose { to: targets, proposal }, Phase::Endorsing)
        };
        self.phase = phase;
        vec![
            send,
            Command::StartTimer {
                token: self.token,
                after: session.config.endorse_timeout,
            },
        ]
    }

    fn finish(&mut self, outcome: Outcome) -> Vec<Command> {
        self.phase = Phase::Done;
        self.outcome = Some(outcome.clone());
        vec![Command::Finished(outcome)]
    }

    fn fail(&mut self, session: &mut ClientSession, failure: Failure) -> Vec<Command> {
        if !session.config.auto_retry || !failure.retryable() {
            return self.finish(Outcome::Failed(failure));
        }
        if self.attempts >= session.config.max_attempts {
            session.suspect(failure.implicated());
            return self.finish(Outcome::Failed(failure));
        }
        match session.avoid_and_retry(&failure) {
            Ok(targets) => self.attempt(session, targets),
            Err(exhausted) => self.finish(Outcome::Failed(exhausted)),
        }
    }

    fn awaiting(&self, proposal_id: &Hash32, org: &str) -> bool {
        self.proposal_id().as_ref() == Some(proposal_id)
            && self.targets.iter().any(|t| t == org)
            && !self.endorsements.contains_key(org)
            && !self.reads.contains_key(org)
            && !self.refused.contains(org)
    }

    /// An organization's answer to the proposal `proposal_id`.
    pub fn on_endorsement(
        &mut self,
        session: &mut ClientSession,
        proposal_id: &Hash32,
        org: &str,
        response: Result<Endorsement, String>,
    ) -> Vec<Command> {
        if self.phase != Phase::Endorsing || !self.awaiting(proposal_id, org) {
            return Vec::new();
        }
        let endorsement = match response {
            Err(why) => return self.finish(Outcome::Failed(Failure::Refused(why))),
            Ok(e) => e,
        };
        if endorsement.org_id != org || (session.config.verify_signatures && !endorsement.verify(&*session.registry))
        {
            return self.fail(
                session,
                Failure::EndorsementMismatch {
                    implicated: vec![org.into()],
                },
            );
        }
        self.endorsements.insert(org.into(), endorsement);
        if self.endorsements.len() < session.policy.q() {
            return Vec::new();
        }
        let endorsements: Vec<Endorsement> = self.endorsements.values().cloned().collect();
        let proposal = self.proposal.clone().expect("proposal exists while endorsing");
        match Transaction::assemble(&session.signer, proposal, &endorsements) {
            Err(AssembleError::EndorsementMismatch { implicated }) => {
                self.fail(session, Failure::EndorsementMismatch { implicated })
            }
            Err(AssembleError::NoEndorsements) => unreachable!("q is positive"),
            Ok(tx) => {
                self.phase = Phase::Committing;
                self.token += 1;
                self.commit_targets = self.targets.iter().cloned().collect();
                self.receipts.clear();
                self.tx = Some(tx.clone());
                vec![
                    Command::Commit {
                        to: self.targets.clone(),
                        tx,
                    },
                    Command::StartTimer {
                        token: self.token,
                        after: session.config.receipt_timeout,
                    },
                ]
            }
        }
    }

    pub fn on_read(
        &mut self,
        session: &mut ClientSession,
        proposal_id: &Hash32,
        org: &str,
        response: Result<View, String>,
    ) -> Vec<Command> {
        if self.phase != Phase::Reading || !self.awaiting(proposal_id, org) {
            return Vec::new();
        }
        match response {
            Err(why) => self.finish(Outcome::Failed(Failure::Refused(why))),
            Ok(view) => {
                self.reads.insert(org.into(), view);
                if self.reads.len() < session.policy.q() {
                    return Vec::new();
                }
                let views = std::mem::take(&mut self.reads).into_iter().collect();
                self.finish(Outcome::Read(views))
            }
        }
    }

    pub fn on_receipt(&mut self, session: &mut ClientSession, org: &str, receipt: Receipt) -> Vec<Command> {
        let expected = self.tx_id();
        if self.phase != Phase::Committing
            || Some(receipt.tx_id) != expected
            || receipt.org_id != org
            || !self.commit_targets.contains(org)
            || self.receipts.contains_key(org)
        {
            return Vec::new();
        }
        if session.config.verify_signatures && !receipt.verify(&*session.registry) {
            return Vec::new();
        }
        if receipt.verdict == Validity::Invalid {
            let reason = receipt.reason;
            return self.finish(Outcome::Failed(Failure::Rejected(vec![(org.into(), reason)])));
        }
        self.receipts.insert(org.into(), receipt);
        if self.receipts.len() < session.policy.q() {
            return Vec::new();
        }
        let receipts = std::mem::take(&mut self.receipts).into_values().collect();
        self.finish(Outcome::Committed(receipts))
    }

    pub fn on_timeout(&mut self, session: &mut ClientSession, token: u64) -> Vec<Command> {
        if token != self.token || self.phase == Phase::Done {
            return Vec::new();
        }
        match self.phase {
            Phase::Endorsing | Phase::Reading => {
                let silent: Vec<String> = self
                    .targets
                    .iter()
                    .filter(|t| !self.endorsements.contains_key(*t) && !self.reads.contains_key(*t))
                    .cloned()
                    .collect();
                self.fail(session, Failure::Timeout { silent })
            }
            Phase::Committing => self.recommit(session),
            Phase::Done => Vec::new(),
        }
    }

    /// Sends the same transaction to replacements for the organizations
    /// that did not answer. Resending is safe: commits are idempotent per
    /// transaction id, unlike a fresh proposal.
    fn recommit(&mut self, session: &mut ClientSession) -> Vec<Command> {
        let silent: Vec<String> = self
            .commit_targets
            .iter()
            .filter(|t| !self.receipts.contains_key(*t))
            .cloned()
            .collect();
        let failure = Failure::Timeout { silent: silent.clone() };
        if !session.config.auto_retry || self.attempts >= session.config.max_attempts {
            return self.finish(Outcome::Failed(failure));
        }
        self.attempts += 1;
        session.suspect(&silent);
        let answered: BTreeSet<String> = self.receipts.keys().cloned().collect();
        let needed = session.policy.q() - answered.len();
        match session.select_from(&answered, needed) {
            Err(exhausted) => self.finish(Outcome::Failed(exhausted)),
            Ok(more) => {
                self.token += 1;
                self.commit_targets.extend(more.iter().cloned());
                vec![
                    Command::Commit {
                        to: more,
                        tx: self.tx.clone().expect("transaction exists while committing"),
                    },
                    Command::StartTimer {
                        token: self.token,
                        after: session.config.receipt_timeout,
                    },
                ]
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("{0} unreachable")]
    Unreachable(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad frame: {0}")]
    Decode(#[from] orderless_core::DecodeError),
}

/// Request/response access to organizations by id.
pub trait OrgTransport: Sync {
    fn call(&self, org: &str, request: Request) -> Result<Response, TransportError>;
}

fn fan_out<T: OrgTransport + ?Sized>(transport: &T, to: &[String], request: &Request) -> Vec<(String, Response)> {
    std::thread::scope(|s| {
        let handles: Vec<_> = to
            .iter()
            .map(|org| s.spawn(move || (org.clone(), transport.call(org, request.clone()))))
            .collect();
        handles
            .into_iter()
            .filter_map(|h| match h.join().expect("transport call panicked") {
                (org, Ok(resp)) => Some((org, resp)),
                (_, Err(_)) => None,
            })
            .collect()
    })
}

/// Runs one call to completion over a blocking transport. An organization
/// that errors or does not answer counts as silent for that phase.
pub fn submit<T: OrgTransport + ?Sized>(session: &mut ClientSession, transport: &T, call: Call, read: bool) -> Outcome {
    let (mut sub, mut cmds) = Submission::begin(session, call, read);
    let mut timers = Vec::new();
    loop {
        while let Some(cmd) = (!cmds.is_empty()).then(|| cmds.remove(0)) {
            match cmd {
                Command::Finished(outcome) => return outcome,
                Command::StartTimer { token, .. } => timers.push(token),
                Command::Propose { to, proposal } | Command::Query { to, proposal } => {
                    let pid = proposal.proposal_id;
                    let req = if read { Request::Query(proposal) } else { Request::Propose(proposal) };
                    for (org, resp) in fan_out(transport, &to, &req) {
                        let more = match resp {
                            Response::Endorsed(e) => sub.on_endorsement(session, &pid, &org, Ok(e)),
                            Response::ReadResult(v) => sub.on_read(session, &pid, &org, Ok(v)),
                            Response::Refused(why) if read => sub.on_read(session, &pid, &org, Err(why)),
                            Response::Refused(why) => sub.on_endorsement(session, &pid, &org, Err(why)),
                            _ => Vec::new(),
                        };
                        cmds.extend(more);
                    }
                }
                Command::Commit { to, tx } => {
                    for (org, resp) in fan_out(transport, &to, &Request::Commit(tx.clone())) {
                        if let Response::Receipt(r) = resp {
                            cmds.extend(sub.on_receipt(session, &org, r));
                        }
                    }
                }
            }
        }
        // Every reachable organization has answered; whatever is still
        // outstanding has timed out.
        match timers.pop() {
            Some(token) => cmds.extend(sub.on_timeout(session, token)),
            None => unreachable!("an unfinished submission always has a timer armed"),
        }
    }
}
