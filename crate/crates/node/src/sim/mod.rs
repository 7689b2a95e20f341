//! Deterministic discrete-event simulation of a network of organizations
//! and clients.
//!
//! Everything random (link jitter, loss, gossip peers, Byzantine coin flips,
//! client target selection) draws from seeded generators, so a run is a pure
//! function of its inputs. [`Simulation::trace_digest`] hashes the event
//! sequence and can be compared across runs.

pub mod byzantine;
pub mod link;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::sync::Arc;

use orderless_core::{ContractRegistry, Encode, EndorsementPolicy, Hash32, Registry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::client::{Call, ClientSession, Command, Outcome, Phase, SessionConfig, Submission};
use crate::genesis::Keyring;
use crate::ledger::Ledger;
use crate::message::{Request, Response};
use crate::node::{OrgNode, VerifyCache};
use byzantine::{corrupt_write_set, ByzantineSchedule, Intercept, MessageClass};
use link::{LinkModel, LinkState};

/// Simulated time in microseconds.
pub type SimTime = u64;

pub const SECOND: SimTime = 1_000_000;

pub fn secs(s: f64) -> SimTime {
    (s * SECOND as f64).round() as SimTime
}

/// Service time an organization spends per request, in microseconds.
///
/// Each organization serves client requests and gossip on two separate
/// FIFO lanes, so a large gossip batch does not stall endorsements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub endorse_us: u64,
    pub query_us: u64,
    pub commit_us: u64,
    /// A transaction the organization already holds.
    pub duplicate_us: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            endorse_us: 400,
            query_us: 200,
            commit_us: 600,
            duplicate_us: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkOverride {
    pub from: String,
    pub to: String,
    pub link: LinkModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub link: LinkModel,
    pub link_overrides: Vec<LinkOverride>,
    /// Peers contacted per gossip round.
    pub gossip_ratio: usize,
    pub gossip_interval_s: f64,
    pub costs: CostModel,
    pub byzantine: ByzantineSchedule,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            link: LinkModel::default(),
            link_overrides: Vec::new(),
            gossip_ratio: 1,
            gossip_interval_s: 1.0,
            costs: CostModel::default(),
            byzantine: ByzantineSchedule::default(),
        }
    }
}

/// Organizations and client sessions sharing one key roster.
pub struct Network {
    pub nodes: Vec<Arc<OrgNode>>,
    pub sessions: Vec<ClientSession>,
    pub registry: Arc<Registry>,
    pub policy: EndorsementPolicy,
}

impl Network {
    /// `orgs` in-memory organizations and `clients` sessions with keys
    /// derived from `seed`.
    pub fn build(
        orgs: usize,
        clients: usize,
        policy: EndorsementPolicy,
        contracts: Arc<ContractRegistry>,
        session: SessionConfig,
        seed: u64,
    ) -> Self {
        assert_eq!(policy.n(), orgs, "policy size must match the organization count");
        let keys = Keyring::derive(orgs, clients, seed);
        let registry = Arc::new(keys.registry());
        let verify = Arc::new(VerifyCache::new());
        let nodes = keys
            .orgs
            .iter()
            .map(|s| {
                Arc::new(OrgNode::with_ledger(
                    s.clone(),
                    registry.clone(),
                    policy.clone(),
                    contracts.clone(),
                    Ledger::in_memory(),
                    verify.clone(),
                ))
            })
            .collect();
        let sessions = keys
            .clients
            .iter()
            .enumerate()
            .map(|(i, s)| {
                ClientSession::new(s.clone(), registry.clone(), policy.clone(), session.clone(), seed ^ (i as u64 + 1) << 20)
            })
            .collect();
        Self {
            nodes,
            sessions,
            registry,
            policy,
        }
    }
}

/// A finished client call.
#[derive(Debug, Clone)]
pub struct Completion {
    pub client: usize,
    pub call: Call,
    pub read: bool,
    pub submitted_at: SimTime,
    pub finished_at: SimTime,
    pub attempts: u32,
    pub outcome: Outcome,
}

impl Completion {
    pub fn latency(&self) -> SimTime {
        self.finished_at - self.submitted_at
    }
}

#[derive(Debug, Clone)]
enum Body {
    Req(Request),
    Resp(Response),
}

#[derive(Debug, Clone)]
struct Envelope {
    /// Submission the message belongs to; zero for gossip.
    corr: u64,
    proposal_id: Hash32,
    body: Body,
}

#[derive(Debug)]
enum Event {
    Deliver { from: usize, to: usize, env: Envelope },
    Process { org: usize, from: usize, env: Envelope, corrupt: Option<u64> },
    GossipTick { org: usize },
    Timer { corr: u64, token: u64 },
    Arrival { client: usize, call: Call, read: bool },
}

impl Event {
    fn tag(&self) -> u8 {
        match self {
            Event::Deliver { .. } => 0,
            Event::Process { .. } => 1,
            Event::GossipTick { .. } => 2,
            Event::Timer { .. } => 3,
            Event::Arrival { .. } => 4,
        }
    }

    /// Whether the event belongs to client traffic rather than background gossip.
    fn is_client(&self) -> bool {
        match self {
            Event::Deliver { env, .. } | Event::Process { env, .. } => env.corr != 0,
            Event::Arrival { .. } => true,
            Event::GossipTick { .. } | Event::Timer { .. } => false,
        }
    }
}

struct Scheduled {
    at: SimTime,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

struct Active {
    client: usize,
    submitted_at: SimTime,
    submission: Submission,
    read: bool,
}

pub struct Simulation {
    config: SimConfig,
    nodes: Vec<Arc<OrgNode>>,
    org_index: HashMap<String, usize>,
    sessions: Vec<ClientSession>,
    now: SimTime,
    seq: u64,
    queue: BinaryHeap<Scheduled>,
    client_events: usize,
    rng: ChaCha8Rng,
    links: HashMap<(usize, usize), LinkState>,
    overrides: HashMap<(usize, usize), LinkModel>,
    /// Per organization: client lane, gossip lane.
    busy_until: Vec<[SimTime; 2]>,
    active: BTreeMap<u64, Active>,
    next_corr: u64,
    submitted: u64,
    completions: Vec<Completion>,
    trace: Sha256,
    events: u64,
}

impl Simulation {
    pub fn new(config: SimConfig, network: Network, seed: u64) -> Self {
        let Network { nodes, sessions, .. } = network;
        let org_index: HashMap<String, usize> =
            nodes.iter().enumerate().map(|(i, n)| (n.id().to_string(), i)).collect();
        let endpoint = |name: &str| {
            org_index.get(name).copied().or_else(|| {
                sessions
                    .iter()
                    .position(|s| s.id() == name)
                    .map(|c| nodes.len() + c)
            })
        };
        let overrides = config
            .link_overrides
            .iter()
            .filter_map(|o| Some(((endpoint(&o.from)?, endpoint(&o.to)?), o.link.clone())))
            .collect();
        let busy_until = vec![[0; 2]; nodes.len()];
        let mut sim = Self {
            config,
            nodes,
            org_index,
            sessions,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            client_events: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            links: HashMap::new(),
            overrides,
            busy_until,
            active: BTreeMap::new(),
            next_corr: 1,
            submitted: 0,
            completions: Vec::new(),
            trace: Sha256::new(),
            events: 0,
        };
        let interval = sim.gossip_interval();
        for org in 0..sim.nodes.len() {
            let phase = sim.rng.gen_range(0..interval.max(1));
            sim.schedule(phase, Event::GossipTick { org });
        }
        sim
    }

    fn gossip_interval(&self) -> SimTime {
        secs(self.config.gossip_interval_s).max(1)
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn nodes(&self) -> &[Arc<OrgNode>] {
        &self.nodes
    }

    pub fn session(&self, client: usize) -> &ClientSession {
        &self.sessions[client]
    }

    pub fn completions(&self) -> &[Completion] {
        &self.completions
    }

    pub fn submitted(&self) -> u64 {
        self.submitted
    }

    pub fn in_flight(&self) -> usize {
        self.active.len()
    }

    pub fn events_processed(&self) -> u64 {
        self.events
    }

    /// Hash of every event handled so far, in order.
    pub fn trace_digest(&self) -> Hash32 {
        Hash32(self.trace.clone().finalize().into())
    }

    /// Whether every organization holds the same state and the same set of
    /// valid transactions.
    pub fn converged(&self) -> bool {
        let first = &self.nodes[0].ledger();
        let (digest, ids) = (first.state_digest(), first.valid_tx_ids());
        self.nodes[1..]
            .iter()
            .all(|n| n.ledger().state_digest() == digest && n.ledger().valid_tx_ids() == ids)
    }

    /// Queues a call by `client` to start at `at`.
    pub fn submit_at(&mut self, at: SimTime, client: usize, call: Call, read: bool) {
        assert!(client < self.sessions.len(), "unknown client {client}");
        self.schedule(at.max(self.now), Event::Arrival { client, call, read });
    }

    /// Handles every event up to and including `until`.
    pub fn run_until(&mut self, until: SimTime) {
        while self.queue.peek().is_some_and(|s| s.at <= until) {
            self.step();
        }
        self.now = self.now.max(until);
    }

    /// Runs until no call is in flight or queued. Returns false if `limit`
    /// is reached first.
    pub fn run_until_quiescent(&mut self, limit: SimTime) -> bool {
        while !self.quiescent() {
            match self.queue.peek() {
                Some(s) if s.at <= limit => self.step(),
                _ => {
                    self.now = self.now.max(limit);
                    return false;
                }
            }
        }
        true
    }

    pub fn quiescent(&self) -> bool {
        self.active.is_empty() && self.client_events == 0
    }

    /// Advances time by `rounds` gossip intervals.
    pub fn run_gossip_rounds(&mut self, rounds: u64) {
        let until = self.now + rounds * self.gossip_interval();
        self.run_until(until);
    }

    fn schedule(&mut self, at: SimTime, event: Event) {
        if event.is_client() {
            self.client_events += 1;
        }
        self.seq += 1;
        self.queue.push(Scheduled {
            at,
            seq: self.seq,
            event,
        });
    }

    fn record(&mut self, at: SimTime, tag: u8, a: usize, b: usize, c: u64) {
        self.trace.update(at.to_be_bytes());
        self.trace.update([tag]);
        self.trace.update((a as u64).to_be_bytes());
        self.trace.update((b as u64).to_be_bytes());
        self.trace.update(c.to_be_bytes());
    }

    fn step(&mut self) {
        let Some(Scheduled { at, event, .. }) = self.queue.pop() else {
            return;
        };
        if event.is_client() {
            self.client_events -= 1;
        }
        self.now = at;
        self.events += 1;
        let tag = event.tag();
        match event {
            Event::Deliver { from, to, env } => {
                self.record(at, tag, from, to, env.corr);
                if to < self.nodes.len() {
                    self.deliver_to_org(from, to, env);
                } else {
                    self.deliver_to_client(from, env);
                }
            }
            Event::Process { org, from, env, corrupt } => {
                self.record(at, tag, org, from, env.corr);
                self.process(org, from, env, corrupt);
            }
            Event::GossipTick { org } => {
                self.record(at, tag, org, 0, 0);
                self.gossip_tick(org);
            }
            Event::Timer { corr, token } => {
                self.record(at, tag, 0, 0, corr ^ token << 32);
                let Some(a) = self.active.get_mut(&corr) else {
                    return;
                };
                let cmds = a.submission.on_timeout(&mut self.sessions[a.client], token);
                self.run_commands(corr, cmds);
            }
            Event::Arrival { client, call, read } => {
                self.record(at, tag, client, 0, read as u64);
                let corr = self.next_corr;
                self.next_corr += 1;
                self.submitted += 1;
                let (submission, cmds) = Submission::begin(&mut self.sessions[client], call, read);
                self.active.insert(
                    corr,
                    Active {
                        client,
                        submitted_at: at,
                        submission,
                        read,
                    },
                );
                self.run_commands(corr, cmds);
            }
        }
    }

    fn send(&mut self, from: usize, to: usize, env: Envelope, size: usize) {
        let model = self.overrides.get(&(from, to)).unwrap_or(&self.config.link);
        let state = self.links.entry((from, to)).or_default();
        for at in model.deliver(size, self.now, state, &mut self.rng) {
            self.schedule(
                at,
                Event::Deliver {
                    from,
                    to,
                    env: env.clone(),
                },
            );
        }
    }

    fn run_commands(&mut self, corr: u64, cmds: Vec<Command>) {
        let Some(client) = self.active.get(&corr).map(|a| a.client) else {
            return;
        };
        let me = self.nodes.len() + client;
        for cmd in cmds {
            let (to, proposal_id, req) = match cmd {
                Command::Propose { to, proposal } => (to, proposal.proposal_id, Request::Propose(proposal)),
                Command::Query { to, proposal } => (to, proposal.proposal_id, Request::Query(proposal)),
                Command::Commit { to, tx } => (to, tx.proposal.proposal_id, Request::Commit(tx)),
                Command::StartTimer { token, after } => {
                    self.schedule(self.now + after.as_micros() as SimTime, Event::Timer { corr, token });
                    continue;
                }
                Command::Finished(outcome) => {
                    let a = self.active.remove(&corr).expect("finishing an active submission");
                    self.completions.push(Completion {
                        client: a.client,
                        call: a.submission.call().clone(),
                        read: a.read,
                        submitted_at: a.submitted_at,
                        finished_at: self.now,
                        attempts: a.submission.attempts(),
                        outcome,
                    });
                    continue;
                }
            };
            let size = req.to_bytes().len();
            for org in to {
                let org = self.org_index[&org];
                let env = Envelope {
                    corr,
                    proposal_id,
                    body: Body::Req(req.clone()),
                };
                self.send(me, org, env, size);
            }
        }
    }

    fn deliver_to_client(&mut self, from: usize, env: Envelope) {
        let Body::Resp(resp) = env.body else {
            return;
        };
        let Some(a) = self.active.get_mut(&env.corr) else {
            return;
        };
        let session = &mut self.sessions[a.client];
        let org = self.nodes[from].id();
        let pid = &env.proposal_id;
        let sub = &mut a.submission;
        let cmds = match resp {
            Response::Endorsed(e) => sub.on_endorsement(session, pid, org, Ok(e)),
            Response::Refused(why) if sub.phase() == Phase::Reading => sub.on_read(session, pid, org, Err(why)),
            Response::Refused(why) => sub.on_endorsement(session, pid, org, Err(why)),
            Response::ReadResult(v) => sub.on_read(session, pid, org, Ok(v)),
            Response::Receipt(r) => sub.on_receipt(session, org, r),
            Response::GossipAck(_) => Vec::new(),
        };
        self.run_commands(env.corr, cmds);
    }

    fn deliver_to_org(&mut self, from: usize, org: usize, env: Envelope) {
        let req = match &env.body {
            Body::Resp(Response::GossipAck(ids)) => {
                if from < self.nodes.len() {
                    let peer = self.nodes[from].id().to_string();
                    self.nodes[org].on_gossip_ack(&peer, ids);
                }
                return;
            }
            Body::Resp(_) => return,
            Body::Req(req) => req,
        };
        let class = match req {
            Request::Propose(_) | Request::Query(_) => MessageClass::Proposal,
            Request::Commit(_) => MessageClass::Commit,
            Request::Gossip { .. } => MessageClass::Other,
        };
        let node = &self.nodes[org];
        let fate = self.config.byzantine.intercept(node.id(), class, self.now, &mut self.rng);
        let corrupt = match fate {
            Intercept::Drop => return,
            Intercept::Corrupt(salt) if matches!(req, Request::Propose(_)) => Some(salt),
            _ => None,
        };
        let costs = &self.config.costs;
        let tx_cost = |id: &Hash32| {
            if node.ledger().contains(id) {
                costs.duplicate_us
            } else {
                costs.commit_us
            }
        };
        let cost = match req {
            Request::Propose(_) => costs.endorse_us,
            Request::Query(_) => costs.query_us,
            Request::Commit(tx) => tx_cost(&tx.tx_id),
            Request::Gossip { txs, .. } => txs.iter().map(|t| tx_cost(&t.tx_id)).sum(),
        };
        let lane = matches!(req, Request::Gossip { .. }) as usize;
        let done = self.now.max(self.busy_until[org][lane]) + cost;
        self.busy_until[org][lane] = done;
        self.schedule(done, Event::Process { org, from, env, corrupt });
    }

    fn process(&mut self, org: usize, from: usize, env: Envelope, corrupt: Option<u64>) {
        let Body::Req(req) = env.body else {
            return;
        };
        let node = &self.nodes[org];
        let resp = match (req, corrupt) {
            (Request::Propose(p), Some(salt)) => match node.endorse_with(&p, |ws| corrupt_write_set(ws, salt)) {
                Ok(e) => Response::Endorsed(e),
                Err(e) => Response::Refused(e.to_string()),
            },
            (req, _) => node.handle(req),
        };
        let size = resp.to_bytes().len();
        let env = Envelope {
            corr: env.corr,
            proposal_id: env.proposal_id,
            body: Body::Resp(resp),
        };
        self.send(org, from, env, size);
    }

    fn gossip_tick(&mut self, org: usize) {
        let next = self.now + self.gossip_interval();
        self.schedule(next, Event::GossipTick { org });
        let node = self.nodes[org].clone();
        if self.config.byzantine.intercept(node.id(), MessageClass::Gossip, self.now, &mut self.rng) == Intercept::Drop {
            return;
        }
        for (peer, txs) in node.gossip_round(self.config.gossip_ratio, &mut self.rng) {
            let req = Request::Gossip {
                from: node.id().to_string(),
                txs,
            };
            let size = req.to_bytes().len();
            let env = Envelope {
                corr: 0,
                proposal_id: Hash32::ZERO,
                body: Body::Req(req),
            };
            let to = self.org_index[&peer];
            self.send(org, to, env, size);
        }
    }
}
