//! Smoke test over real sockets on localhost.

use std::collections::BTreeMap;
use std::net::TcpListener;
use std::sync::Arc;
use std::time::{Duration, Instant};

use orderless::client::{submit, Call, ClientSession, Outcome, SessionConfig};
use orderless::genesis::Keyring;
use orderless::node::OrgNode;
use orderless::transport::{TcpServer, TcpTransport};
use orderless_core::{ContractRegistry, EndorsementPolicy, View};

#[test]
fn bids_commit_over_tcp_and_gossip_converges() {
    let keys = Keyring::derive(4, 2, 11);
    let registry = Arc::new(keys.registry());
    let policy = EndorsementPolicy::new(2, 4).unwrap();
    let contracts = Arc::new(ContractRegistry::with_defaults());

    let listeners: Vec<TcpListener> = (0..4).map(|_| TcpListener::bind("127.0.0.1:0").unwrap()).collect();
    let addrs: BTreeMap<String, _> = keys
        .orgs
        .iter()
        .zip(&listeners)
        .map(|(s, l)| (s.id().to_string(), l.local_addr().unwrap()))
        .collect();
    let peers = Arc::new(TcpTransport::new(addrs.clone(), Duration::from_secs(2)));
    let nodes: Vec<Arc<OrgNode>> = keys
        .orgs
        .iter()
        .map(|s| Arc::new(OrgNode::new(s.clone(), registry.clone(), policy.clone(), contracts.clone())))
        .collect();
    let servers: Vec<TcpServer> = nodes
        .iter()
        .zip(listeners)
        .enumerate()
        .map(|(i, (n, l))| TcpServer::spawn(n.clone(), l, peers.clone(), Duration::from_millis(50), 2, i as u64).unwrap())
        .collect();

    let transport = TcpTransport::new(addrs, Duration::from_secs(2));
    let mut alice = ClientSession::new(keys.clients[0].clone(), registry.clone(), policy.clone(), SessionConfig::default(), 1);
    let mut bob = ClientSession::new(keys.clients[1].clone(), registry, policy, SessionConfig::default(), 2);
    for (who, amount) in [(0, "5"), (1, "7"), (0, "4")] {
        let session = if who == 0 { &mut alice } else { &mut bob };
        let out = submit(session, &transport, Call::new("auction", "bid", &[amount, "lot"]), false);
        assert!(matches!(out, Outcome::Committed(ref r) if r.len() == 2), "{out:?}");
    }

    let deadline = Instant::now() + Duration::from_secs(20);
    while nodes.iter().any(|n| n.ledger().len() < 3) {
        assert!(Instant::now() < deadline, "gossip did not spread the bids");
        std::thread::sleep(Duration::from_millis(50));
    }
    let digest = nodes[0].ledger().state_digest();
    assert!(nodes.iter().all(|n| n.ledger().state_digest() == digest));

    match submit(&mut bob, &transport, Call::new("auction", "get_highest_bid", &["lot"]), true) {
        Outcome::Read(views) => {
            for (_, v) in views {
                let View::Map(m) = v else { panic!("unexpected view {v:?}") };
                assert_eq!(m.keys().next().map(String::as_str), Some("client-0"));
            }
        }
        other => panic!("{other:?}"),
    }
    for s in servers {
        s.shutdown();
    }
}
