use std::sync::Arc;

use orderless::client::{submit, Call, ClientSession, Outcome, SessionConfig};
use orderless::genesis::Keyring;
use orderless::ledger::Ledger;
use orderless::node::{OrgNode, VerifyCache};
use orderless::transport::LocalTransport;
use orderless_core::{ContractRegistry, EndorsementPolicy};

#[test]
fn reopened_node_keeps_state_and_answers_duplicates_identically() {
    let dir = tempfile::tempdir().unwrap();
    let keys = Keyring::derive(3, 1, 5);
    let registry = Arc::new(keys.registry());
    let policy = EndorsementPolicy::new(3, 3).unwrap();
    let contracts = Arc::new(ContractRegistry::with_defaults());
    let open = |i: usize| {
        Arc::new(OrgNode::with_ledger(
            keys.orgs[i].clone(),
            registry.clone(),
            policy.clone(),
            contracts.clone(),
            Ledger::open(&dir.path().join(format!("org-{i}"))).unwrap(),
            Arc::new(VerifyCache::new()),
        ))
    };
    let mut session = ClientSession::new(keys.clients[0].clone(), registry.clone(), policy.clone(), SessionConfig::default(), 1);

    let nodes: Vec<_> = (0..3).map(open).collect();
    let transport = LocalTransport::new(nodes.clone());
    let mut last_tx = None;
    for i in 1..=4 {
        let call = Call::new("voting", "vote", &[&format!("party-{i}"), "election-0"]);
        let Outcome::Committed(receipts) = submit(&mut session, &transport, call, false) else {
            panic!("vote {i} failed");
        };
        last_tx = Some(receipts[0].tx_id);
    }
    let before: Vec<_> = nodes.iter().map(|n| (n.ledger().state_digest(), n.ledger().head_hash())).collect();
    let tx = nodes[0].ledger().block_of(&last_tx.unwrap()).unwrap().transaction;
    let receipt_before = nodes[1].commit(tx.clone());
    drop(transport);
    drop(nodes);

    let nodes: Vec<_> = (0..3).map(open).collect();
    let after: Vec<_> = nodes.iter().map(|n| (n.ledger().state_digest(), n.ledger().head_hash())).collect();
    assert_eq!(before, after);
    assert!(nodes.iter().all(|n| n.ledger().verify_chain()));
    assert_eq!(nodes[1].commit(tx), receipt_before);
    assert_eq!(nodes[1].ledger().len(), 4);
}
