//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 3 7`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use orderless::bench::{prepare, run_simulation, Application, WorkloadConfig};
use orderless::client::{Call, Failure, Outcome, SessionConfig};
use orderless::genesis::Keyring;
use orderless::ledger::Ledger;
use orderless::node::{OrgNode, VerifyCache};
use orderless::sim::byzantine::{corrupt_write_set, Behavior, ByzantineSchedule, Window};
use orderless::sim::link::LinkModel;
use orderless::sim::{secs, Network, SimConfig, Simulation, SECOND};
use orderless_core::contract::{Auction, Voting};
use orderless_core::{
    verify_blocks, ContractRegistry, CrdtObject, Decode, Encode, EndorsementPolicy, Hash32, LamportClock, Operation,
    OperationId, OperationPath, Proposal, Transaction, Validity, Value, View,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

static LEDGERS_CHECKED: AtomicUsize = AtomicUsize::new(0);

/// Hash chain check over every organization of a finished run.
fn chains_ok(sim: &Simulation) -> Result<(), String> {
    for n in sim.nodes() {
        n.ledger().verify().map_err(|e| format!("{}: chain broken: {e:?}", n.id()))?;
        LEDGERS_CHECKED.fetch_add(1, Ordering::Relaxed);
    }
    Ok(())
}

/// A link that reorders and duplicates aggressively.
fn scrambling_link() -> LinkModel {
    LinkModel {
        base_delay_ms: 100.0,
        jitter_ms: 90.0,
        loss_rate: 0.01,
        duplicate_rate: 0.05,
        reorder: true,
        bandwidth_bps: Some(100_000_000),
    }
}

fn settle(sim: &mut Simulation, rounds: u64) -> Result<(), String> {
    let limit = sim.now() + 600 * SECOND;
    ensure!(sim.run_until_quiescent(limit), "calls still in flight after 600 s of drain");
    sim.run_gossip_rounds(rounds);
    Ok(())
}

// 1 -------------------------------------------------------------------------

fn convergence() -> Verdict {
    let started = Instant::now();
    let mut runs = 0;
    let mut txs = 0;
    for app in [Application::Synthetic, Application::Voting, Application::Auction] {
        for seed in 0..20u64 {
            let cfg = WorkloadConfig {
                application: app,
                arrival_rate: 10.0,
                duration_s: 60.0,
                read_percent: 20,
                modify_percent: 80,
                num_orgs: 8,
                q: 4,
                clients: 40,
                seed: 1000 + seed,
                obj_count: 2,
                ops_per_obj: 2,
                crdt_type: ["gcounter", "mvregister", "map"][seed as usize % 3].into(),
                elections: 2,
                parties: 3,
                auctions: 2,
                link: scrambling_link(),
                ..Default::default()
            };
            let mut sim = prepare(&cfg).map_err(|e| e.to_string())?;
            sim.run_until(secs(cfg.duration_s));
            settle(&mut sim, 32)?;
            ensure!(sim.converged(), "{app:?} seed {seed}: organizations diverged");
            chains_ok(&sim)?;
            runs += 1;
            txs += sim.nodes()[0].ledger().valid_tx_ids().len();
        }
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(120), "took {elapsed:.1?}, limit 2 min");
    Ok(format!("{runs}/60 runs converged, {txs} valid transactions, {elapsed:.1?}"))
}

// 2 -------------------------------------------------------------------------

const CLIENTS: [&str; 3] = ["c1", "c2", "c3"];

fn random_id(rng: &mut ChaCha8Rng) -> OperationId {
    OperationId::new(CLIENTS[rng.gen_range(0..3)], rng.gen_range(1..5))
}

fn random_value(rng: &mut ChaCha8Rng) -> Option<Value> {
    match rng.gen_range(0..5) {
        0 => None,
        1 => Some(Value::Bool(rng.gen())),
        _ => Some(Value::Int(rng.gen_range(-3..4))),
    }
}

fn path(segments: &[&str]) -> OperationPath {
    OperationPath::from(segments.iter().map(|s| s.to_string()).collect::<Vec<_>>())
}

/// Batches whose paths never disagree about the type at a location.
fn random_batch(kind: usize, len: usize, rng: &mut ChaCha8Rng) -> Vec<Operation> {
    (0..len)
        .map(|_| {
            let id = random_id(rng);
            match kind {
                0 => {
                    let p = [["x"].as_slice(), &["y"], &["n", "z"]][rng.gen_range(0..3)];
                    Operation::add_value("counter", id, path(p), rng.gen_range(1..20))
                }
                1 => {
                    let p = [["r"].as_slice(), &["n", "r"]][rng.gen_range(0..2)];
                    Operation::assign_value("register", id, path(p), random_value(rng))
                }
                _ => {
                    let map = if rng.gen() { OperationPath::root() } else { OperationPath::from(["n"]) };
                    let key = ["a", "b", "c"][rng.gen_range(0..3)];
                    Operation::insert_value("map", id, map, key, random_value(rng))
                }
            }
        })
        .collect()
}

fn serialized_state(object: &str, ops: &[&Operation]) -> Vec<u8> {
    let mut obj = CrdtObject::new(object);
    obj.apply_operations(ops.iter().copied()).expect("generated operations are well typed");
    obj.to_bytes()
}

fn permutations() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut batches, mut perms) = (0usize, 0usize);
    for kind in 0..3 {
        let object = ["counter", "register", "map"][kind];
        for b in 0..180 {
            let len = 1 + (b % 6);
            let batch = random_batch(kind, len, &mut rng);
            let mut order: Vec<&Operation> = batch.iter().collect();
            let reference = serialized_state(object, &order);
            // Heap's algorithm visits every ordering exactly once.
            let mut c = vec![0usize; len];
            let mut seen = 1;
            let mut i = 0;
            while i < len {
                if c[i] < i {
                    let j = if i % 2 == 0 { 0 } else { c[i] };
                    order.swap(j, i);
                    seen += 1;
                    ensure!(
                        serialized_state(object, &order) == reference,
                        "{object} batch {b}: order {order:?} diverged"
                    );
                    c[i] += 1;
                    i = 0;
                } else {
                    c[i] = 0;
                    i += 1;
                }
            }
            ensure!(seen == (1..=len).product::<usize>(), "visited {seen} orders of {len}");
            batches += 1;
            perms += seen;
        }
    }
    ensure!(batches >= 500, "only {batches} batches");
    Ok(format!("{batches} batches, {perms} orderings, all identical"))
}

// 3 -------------------------------------------------------------------------

struct Fixture {
    keys: Keyring,
    nodes: Vec<OrgNode>,
    policy: EndorsementPolicy,
}

fn fixture(orgs: usize, clients: usize, q: usize) -> Fixture {
    let keys = Keyring::derive(orgs, clients, 33);
    let registry = Arc::new(keys.registry());
    let policy = EndorsementPolicy::new(q, orgs).unwrap();
    let contracts = Arc::new(ContractRegistry::with_defaults());
    let verify = Arc::new(VerifyCache::new());
    let nodes = keys
        .orgs
        .iter()
        .map(|s| {
            OrgNode::with_ledger(
                s.clone(),
                registry.clone(),
                policy.clone(),
                contracts.clone(),
                Ledger::in_memory(),
                verify.clone(),
            )
        })
        .collect();
    Fixture { keys, nodes, policy }
}

fn random_call(rng: &mut ChaCha8Rng) -> Call {
    match rng.gen_range(0..3) {
        0 => Call::new("voting", "vote", &[&format!("party-{}", rng.gen_range(0..8)), "election-0"]),
        1 => Call::new("auction", "bid", &[&rng.gen_range(1..100).to_string(), "a"]),
        _ => Call::new("synthetic", "modify", &["2", "2", ["gcounter", "mvregister", "map"][rng.gen_range(0..3)]]),
    }
}

const COLLUSION_SALT: u64 = 0xbad;

fn safety() -> Verdict {
    let f = 3;
    let fx = fixture(16, 20, 4);
    let honest = &fx.nodes[f..];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut honest_ws: HashMap<Hash32, Vec<Operation>> = HashMap::new();
    let mut clocks = vec![0u64; fx.keys.clients.len()];
    let (mut adversarial, mut controls) = (0, 0);
    let mut rejected_by = BTreeMap::new();
    for i in 0..1100 {
        let c = rng.gen_range(0..clocks.len());
        clocks[c] += 1;
        let call = random_call(&mut rng);
        let client = &fx.keys.clients[c];
        let p = Proposal::new(client, LamportClock(clocks[c]), &call.contract_id, &call.function, call.args.clone());
        let good: Vec<_> = honest[..4].iter().map(|n| n.endorse(&p).unwrap()).collect();
        honest_ws.insert(p.proposal_id, good[0].write_set.clone());
        let tx = if i % 11 == 10 {
            controls += 1;
            Transaction::assemble(client, p, &good).unwrap()
        } else {
            adversarial += 1;
            let bad: Vec<_> = fx.nodes[..f]
                .iter()
                .map(|n| n.endorse_with(&p, |ws| corrupt_write_set(ws, COLLUSION_SALT)).unwrap())
                .collect();
            let ws = bad[0].write_set.clone();
            let mut sigs: Vec<_> = bad.iter().map(|e| e.signature_part()).collect();
            match i % 5 {
                // Too few endorsements.
                0 => {}
                // An honest signature over the honest write-set.
                1 => sigs.push(good[0].signature_part()),
                // An honest organization's name on a faulty signature.
                2 => {
                    let mut forged = bad[0].signature_part();
                    forged.org_id = good[0].org_id.clone();
                    sigs.push(forged);
                }
                // One faulty endorsement counted twice.
                3 => sigs.push(sigs[0].clone()),
                // Honest signatures only, attached to the corrupted write-set.
                _ => sigs = good.iter().map(|e| e.signature_part()).collect(),
            }
            Transaction::assemble_unchecked(client, p, ws, sigs)
        };
        for n in honest {
            let r = n.commit(tx.clone());
            if r.verdict == Validity::Invalid {
                *rejected_by.entry(r.reason.map(|x| x.name()).unwrap_or("?")).or_insert(0usize) += 1;
            }
        }
    }
    ensure!(adversarial >= 1000, "only {adversarial} adversarial transactions");
    for n in honest {
        let mut valid = 0;
        for b in n.ledger().blocks() {
            if b.validity != Validity::Valid {
                continue;
            }
            valid += 1;
            let expected = &honest_ws[&b.transaction.proposal.proposal_id];
            ensure!(
                &b.transaction.write_set == expected,
                "{} accepted a corrupted write-set at height {}",
                n.id(),
                b.height
            );
        }
        ensure!(valid == controls, "{}: {valid} valid blocks, expected {controls}", n.id());
    }

    // With f = q the faulty organizations alone satisfy the policy.
    let fx = fixture(16, 1, 4);
    let client = &fx.keys.clients[0];
    let p = Proposal::new(client, LamportClock(1), "auction", "bid", vec![b"5".to_vec(), b"a".to_vec()]);
    let honest_ws = fx.nodes[15].endorse(&p).unwrap().write_set;
    let bad: Vec<_> = fx.nodes[..4]
        .iter()
        .map(|n| n.endorse_with(&p, |ws| corrupt_write_set(ws, COLLUSION_SALT)).unwrap())
        .collect();
    let tx = Transaction::assemble(client, p, &bad).map_err(|e| e.to_string())?;
    let r = fx.nodes[15].commit(tx.clone());
    ensure!(
        r.verdict == Validity::Valid && tx.write_set != honest_ws,
        "f = q collusion did not get a corrupted write-set committed"
    );
    let _ = fx.policy;
    Ok(format!(
        "f=3: {adversarial} adversarial transactions rejected by 13 honest orgs {rejected_by:?}, \
         {controls} honest controls valid; f=4: corrupted bid of 5 committed as {:?}",
        tx.write_set[0].value
    ))
}

// 4 -------------------------------------------------------------------------

fn silent(orgs: usize, horizon_s: f64) -> ByzantineSchedule {
    let mut s = ByzantineSchedule {
        activation_probability: 1.0,
        ..Default::default()
    };
    for o in 0..orgs {
        s.add(
            &format!("org-{o}"),
            Window {
                start_s: 0.0,
                end_s: horizon_s,
                behaviors: vec![Behavior::DropProposals, Behavior::DropCommits, Behavior::SuppressGossip],
            },
        );
    }
    s
}

/// 200 bids over 20 s with `f` organizations silent for the whole run,
/// including the drain.
fn liveness_run(f: usize) -> Result<Simulation, String> {
    let horizon = 1000.0;
    let network = Network::build(
        8,
        40,
        EndorsementPolicy::new(4, 8).unwrap(),
        Arc::new(ContractRegistry::with_defaults()),
        SessionConfig::default(),
        4,
    );
    let cfg = SimConfig {
        byzantine: silent(f, horizon),
        ..Default::default()
    };
    let mut sim = Simulation::new(cfg, network, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for k in 0..200u64 {
        let amount = rng.gen_range(1..=10).to_string();
        sim.submit_at(k * SECOND / 10, rng.gen_range(0..40), Call::new("auction", "bid", &[&amount, "a"]), false);
    }
    ensure!(sim.run_until_quiescent(secs(horizon)), "calls still in flight at {horizon} s");
    chains_ok(&sim)?;
    Ok(sim)
}

fn liveness() -> Verdict {
    let q = 4;
    let sim = liveness_run(8 - q)?;
    let total = sim.completions().len();
    for c in sim.completions() {
        let Outcome::Committed(receipts) = &c.outcome else {
            return Err(format!("client {} call failed with {:?}", c.client, c.outcome));
        };
        let orgs: BTreeSet<&str> = receipts
            .iter()
            .filter(|r| r.verdict == Validity::Valid)
            .map(|r| r.org_id.as_str())
            .collect();
        ensure!(orgs.len() >= q, "only {} valid receipts", orgs.len());
        let holders = sim.nodes().iter().filter(|n| n.ledger().block_of(&receipts[0].tx_id).is_some()).count();
        ensure!(holders >= q, "transaction held by {holders} organizations");
    }
    ensure!(total == sim.submitted() as usize, "{} of {} calls finished", total, sim.submitted());
    let retried = sim.completions().iter().filter(|c| c.attempts > 1).count();

    let sim = liveness_run(8 - q + 1)?;
    let exhausted = sim
        .completions()
        .iter()
        .filter(|c| matches!(c.outcome, Outcome::Failed(Failure::Exhausted)))
        .count();
    let committed = sim.completions().iter().filter(|c| c.outcome.is_success()).count();
    ensure!(exhausted >= 1, "no call exhausted with f = n-q+1");
    ensure!(committed == 0, "{committed} calls committed with only 3 live organizations");
    ensure!(
        sim.nodes().iter().all(|n| n.ledger().is_empty()),
        "a ledger holds blocks with fewer than q live organizations"
    );
    Ok(format!(
        "f=4: {total}/{total} committed with >= 4 valid receipts ({retried} needed retries); \
         f=5: {exhausted}/{} exhausted",
        sim.completions().len()
    ))
}

// 5 -------------------------------------------------------------------------

fn scrambled(seed: u64, clients: usize, contracts: ContractRegistry) -> Simulation {
    let network = Network::build(
        8,
        clients,
        EndorsementPolicy::new(4, 8).unwrap(),
        Arc::new(contracts),
        SessionConfig::default(),
        seed,
    );
    let cfg = SimConfig {
        link: LinkModel {
            loss_rate: 0.0,
            ..scrambling_link()
        },
        ..Default::default()
    };
    Simulation::new(cfg, network, seed)
}

fn voting() -> Verdict {
    let voters = 1000;
    let parties = 4;
    let mut contracts = ContractRegistry::new();
    contracts.register(Box::new(Voting::fixture(1, parties)));
    let mut sim = scrambled(5, voters, contracts);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cast = 0;
    for v in 0..voters {
        // A first vote and up to three revotes, some of them overlapping in flight.
        for _ in 0..rng.gen_range(1..=4) {
            let party = format!("party-{}", rng.gen_range(0..parties));
            let at = rng.gen_range(0..60 * SECOND);
            sim.submit_at(at, v, Call::new("voting", "vote", &[&party, "election-0"]), false);
            cast += 1;
        }
    }
    sim.run_until(60 * SECOND);
    settle(&mut sim, 32)?;
    ensure!(sim.converged(), "organizations diverged");
    chains_ok(&sim)?;
    let failed = sim.completions().iter().filter(|c| !c.outcome.is_success()).count();
    ensure!(failed == 0, "{failed} votes failed");

    // Oracle: each voter's latest committed vote, by Lamport clock.
    let ledger = sim.nodes()[0].ledger();
    let mut latest: BTreeMap<String, (u64, String)> = BTreeMap::new();
    for b in ledger.blocks().into_iter().filter(|b| b.validity == Validity::Valid) {
        let p = &b.transaction.proposal;
        let party = String::from_utf8(p.args[0].clone()).unwrap();
        let e = latest.entry(p.client_id.clone()).or_insert((0, String::new()));
        if p.client_clock.0 > e.0 {
            *e = (p.client_clock.0, party);
        }
    }
    let contract = Voting::fixture(1, parties);
    for node in sim.nodes() {
        let l = node.ledger();
        let mut counted: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut total = 0;
        for p in 0..parties {
            let party = format!("party-{p}");
            total += contract.read_vote_count(l, &party, "election-0").unwrap();
            let View::Map(regs) = l.read_object("election-0", &OperationPath::from([party.as_str()])) else {
                continue;
            };
            for (voter, view) in regs {
                if view == View::Register(vec![Value::Bool(true)]) {
                    counted.entry(voter).or_default().push(party.clone());
                }
            }
        }
        ensure!(total <= voters as u64, "{}: {total} votes counted for {voters} voters", node.id());
        for (voter, ps) in &counted {
            ensure!(ps.len() <= 1, "{}: {voter} counts toward {ps:?}", node.id());
            ensure!(ps[0] == latest[voter].1, "{}: {voter} counted for {} not {}", node.id(), ps[0], latest[voter].1);
        }
        ensure!(counted.len() == latest.len(), "{}: {} voters counted, {} voted", node.id(), counted.len(), latest.len());
    }
    Ok(format!("{cast} votes from {voters} voters, each counted once for their latest vote on all 8 orgs"))
}

// 6 -------------------------------------------------------------------------

fn brute_force_highest(totals: &BTreeMap<String, u64>) -> Option<(String, u64)> {
    let best = totals.values().copied().max()?;
    let mut tied: Vec<&String> = totals.iter().filter(|(_, v)| **v == best).map(|(k, _)| k).collect();
    tied.sort();
    Some((tied[0].clone(), best))
}

fn auction() -> Verdict {
    let bidders = 200;
    let auctions = ["a0", "a1", "a2"];
    let mut sim = scrambled(6, bidders, ContractRegistry::with_defaults());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..1500 {
        let at = rng.gen_range(0..60 * SECOND);
        let auction = auctions.choose(&mut rng).unwrap();
        let bidder = rng.gen_range(0..bidders);
        if rng.gen_bool(0.1) {
            sim.submit_at(at, bidder, Call::new("auction", "get_highest_bid", &[auction]), true);
        } else {
            let amount = rng.gen_range(1..=50).to_string();
            sim.submit_at(at, bidder, Call::new("auction", "bid", &[&amount, auction]), false);
        }
    }
    let contract = Auction::new();
    let watched = [0, 5];
    let mut last: HashMap<(usize, &str), BTreeMap<String, u64>> = HashMap::new();
    let mut snapshots = 0;
    for t in (1..=70).map(|s| s * SECOND) {
        sim.run_until(t);
        for &o in &watched {
            for a in auctions {
                let now = contract.totals(sim.nodes()[o].ledger(), a);
                if let Some(prev) = last.get(&(o, a)) {
                    for (bidder, before) in prev {
                        let after = now.get(bidder).copied().unwrap_or(0);
                        ensure!(after >= *before, "org-{o} {a}: {bidder} dropped from {before} to {after}");
                    }
                }
                last.insert((o, a), now);
                snapshots += 1;
            }
        }
    }
    settle(&mut sim, 32)?;
    ensure!(sim.converged(), "organizations diverged");
    chains_ok(&sim)?;

    // Oracle: sum of increments the bidders saw committed.
    let mut expected: BTreeMap<&str, BTreeMap<String, u64>> = BTreeMap::new();
    for c in sim.completions() {
        ensure!(c.outcome.is_success(), "call failed: {:?}", c.outcome);
        if c.read {
            continue;
        }
        let amount: u64 = std::str::from_utf8(&c.call.args[0]).unwrap().parse().unwrap();
        let a = auctions.iter().find(|a| a.as_bytes() == c.call.args[1].as_slice()).unwrap();
        *expected.entry(*a).or_default().entry(sim.session(c.client).id().to_string()).or_default() += amount;
    }
    for node in sim.nodes() {
        for a in auctions {
            let totals = contract.totals(node.ledger(), a);
            let want = expected.get(a).cloned().unwrap_or_default();
            ensure!(totals == want, "{} {a}: totals differ from committed increments", node.id());
            ensure!(
                contract.get_highest_bid(node.ledger(), a) == brute_force_highest(&want),
                "{} {a}: highest bid differs from brute force",
                node.id()
            );
        }
    }
    Ok(format!(
        "{} calls; totals match committed increments on 8 orgs; {snapshots} monotonicity snapshots",
        sim.completions().len()
    ))
}

// 7 -------------------------------------------------------------------------

const ONSETS: [f64; 3] = [30.0, 70.0, 110.0];
const FAULTS_END: f64 = 150.0;

fn byzantine_config(auto_retry: bool) -> WorkloadConfig {
    let mut byzantine = ByzantineSchedule::default();
    for (i, start) in ONSETS.iter().enumerate() {
        byzantine.add(
            &format!("org-{}", i + 1),
            Window {
                start_s: *start,
                end_s: FAULTS_END,
                behaviors: Behavior::ALL.to_vec(),
            },
        );
    }
    WorkloadConfig {
        arrival_rate: 100.0,
        duration_s: 180.0,
        seed: 7,
        byzantine,
        auto_retry,
        ..Default::default()
    }
}

fn window_mean(series: &[u64], from: f64, to: f64) -> f64 {
    let w = &series[from as usize..to as usize];
    w.iter().sum::<u64>() as f64 / w.len() as f64
}

fn byzantine_recovery() -> Verdict {
    let (report, sim) = run_simulation(&byzantine_config(true)).map_err(|e| e.to_string())?;
    chains_ok(&sim)?;
    let s = &report.per_second;
    let pre = window_mean(s, 5.0, ONSETS[0]);
    let mut windows = Vec::new();
    for (i, onset) in ONSETS.iter().enumerate() {
        let end = ONSETS.get(i + 1).copied().unwrap_or(FAULTS_END);
        let mean = window_mean(s, onset + 10.0, end);
        ensure!(mean >= 0.9 * pre, "window after onset {onset} s: {mean:.1} tps < 90% of {pre:.1}");
        windows.push(format!("{mean:.1}"));
    }

    let (no_avoid, _) = run_simulation(&byzantine_config(false)).map_err(|e| e.to_string())?;
    let plain: Vec<String> = ONSETS
        .iter()
        .enumerate()
        .map(|(i, o)| format!("{:.1}", window_mean(&no_avoid.per_second, o + 10.0, ONSETS.get(i + 1).copied().unwrap_or(FAULTS_END))))
        .collect();
    Ok(format!(
        "pre-failure {pre:.1} tps, post-avoidance windows [{}] tps; without avoidance [{}] tps",
        windows.join(", "),
        plain.join(", ")
    ))
}

// 8 -------------------------------------------------------------------------

fn scaling() -> Verdict {
    let mut points = Vec::new();
    for n in [8, 16, 24, 32] {
        let cfg = WorkloadConfig {
            arrival_rate: 100.0,
            duration_s: 30.0,
            num_orgs: n,
            q: 4,
            seed: 8,
            ..Default::default()
        };
        let (r, sim) = run_simulation(&cfg).map_err(|e| e.to_string())?;
        chains_ok(&sim)?;
        points.push((n, r.throughput, r.latency_avg_ms));
    }
    let max = points.iter().map(|p| p.1).fold(f64::MIN, f64::max);
    let min = points.iter().map(|p| p.1).fold(f64::MAX, f64::min);
    let spread = (max - min) / max;
    let shown: Vec<String> = points.iter().map(|(n, t, l)| format!("{n}: {t:.1} tps {l:.0} ms")).collect();
    ensure!(spread < 0.15, "throughput spread {:.1}% [{}]", spread * 100.0, shown.join("; "));
    Ok(format!("spread {:.2}% [{}]", spread * 100.0, shown.join("; ")))
}

// 9 -------------------------------------------------------------------------

fn ledger_integrity() -> Verdict {
    let cfg = WorkloadConfig {
        application: Application::Voting,
        arrival_rate: 20.0,
        duration_s: 10.0,
        num_orgs: 4,
        q: 2,
        clients: 30,
        seed: 9,
        ..Default::default()
    };
    let (_, sim) = run_simulation(&cfg).map_err(|e| e.to_string())?;
    chains_ok(&sim)?;
    let blocks = sim.nodes()[0].ledger().blocks();
    ensure!(blocks.len() > 50, "only {} blocks", blocks.len());
    verify_blocks(&blocks).map_err(|e| format!("honest chain rejected: {e:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut undecodable, mut broken) = (0, 0);
    for trial in 0..1000 {
        let i = rng.gen_range(0..blocks.len());
        let mut bytes = blocks[i].to_bytes();
        let at = rng.gen_range(0..bytes.len());
        bytes[at] ^= rng.gen_range(1..=255u8);
        match orderless_core::Block::from_bytes(&bytes) {
            Err(_) => undecodable += 1,
            Ok(mutated) => {
                let mut chain = blocks.clone();
                chain[i] = mutated;
                ensure!(verify_blocks(&chain).is_err(), "trial {trial}: flip at byte {at} of block {i} undetected");
                broken += 1;
            }
        }
    }
    Ok(format!(
        "verify_chain passed on {} ledgers; 1000/1000 flips detected ({broken} by the chain, {undecodable} undecodable)",
        LEDGERS_CHECKED.load(Ordering::Relaxed)
    ))
}

// 10 ------------------------------------------------------------------------

fn linear_ops(count: usize) -> Vec<Operation> {
    (0..count)
        .map(|i| {
            let id = OperationId::new(format!("c{}", i % 64), (i / 64 + 1) as u64);
            let slot = (i / 7) % 64;
            match i % 3 {
                0 => Operation::add_value("shape", id, [format!("k{slot}")], 1 + (i % 5) as i64),
                1 => Operation::assign_value("shape", id, [format!("r{slot}")], Some(Value::Int(i as i64))),
                _ => Operation::insert_value("shape", id, ["m"], format!("e{slot}"), Some(Value::Int(i as i64))),
            }
        })
        .collect()
}

fn apply_once(ops: &[Operation]) -> Duration {
    let mut obj = CrdtObject::new("shape");
    let t = Instant::now();
    obj.apply_operations(ops).unwrap();
    let d = t.elapsed();
    // Freeing the object is not part of applying.
    drop(std::hint::black_box(obj));
    d
}

/// One trial: 24 rounds, each applying both sizes to fresh objects back to
/// back, so drifts in machine speed hit the two sizes alike.
fn paired_trial(half: &[Operation], full: &[Operation]) -> (Duration, Duration) {
    (0..24).fold((Duration::ZERO, Duration::ZERO), |(s, l), _| {
        (s + apply_once(half), l + apply_once(full))
    })
}

fn linearity() -> Verdict {
    let ops = linear_ops(20_000);
    let (half, full) = (&ops[..10_000], &ops[..]);
    apply_once(full);
    let (mut small, mut large): (Vec<Duration>, Vec<Duration>) = (0..5).map(|_| paired_trial(half, full)).unzip();
    small.sort();
    large.sort();
    let (small, large) = (small[2], large[2]);
    let ratio = large.as_secs_f64() / small.as_secs_f64();
    ensure!(ratio <= 2.2, "20k ops took {ratio:.2}x the time of 10k ({large:?} vs {small:?})");
    Ok(format!("median of 5: 10k ops {:.1?}, 20k ops {:.1?}, ratio {ratio:.2}", small / 24, large / 24))
}

// ---------------------------------------------------------------------------

type Criterion = (u32, &'static str, fn() -> Verdict);

const CRITERIA: [Criterion; 10] = [
    (1, "convergence", convergence),
    (2, "permutation oracle", permutations),
    (3, "safety bound", safety),
    (4, "liveness bound", liveness),
    (5, "voting invariant", voting),
    (6, "auction invariant", auction),
    (7, "byzantine recovery", byzantine_recovery),
    (8, "scaling trend", scaling),
    (9, "ledger integrity", ledger_integrity),
    (10, "apply linearity", linearity),
];

fn main() -> ExitCode {
    let wanted: BTreeSet<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, check) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("criterion {id:>2} {name}: PASS ({secs:.1} s) {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {id:>2} {name}: FAIL ({secs:.1} s) {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
