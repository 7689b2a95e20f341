//! Random single-byte corruption of signed artifacts never yields something
//! that still verifies as the original.

use orderless_core::{
    validate_transaction, Decode, Encode, Endorsement, EndorsementPolicy, LamportClock, Operation, OperationId,
    Proposal, Registry, Role, Signer, Transaction, Value,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Net {
    registry: Registry,
    client: Signer,
    orgs: Vec<Signer>,
}

fn net() -> Net {
    let mut registry = Registry::new();
    let client = Signer::derive("client-0", 7);
    registry.register(client.identity(Role::Client)).unwrap();
    let orgs: Vec<Signer> = (0..4).map(|i| Signer::derive(format!("org-{i}"), 7)).collect();
    for o in &orgs {
        registry.register(o.identity(Role::Organization)).unwrap();
    }
    Net { registry, client, orgs }
}

fn tx(net: &Net, clock: u64) -> Transaction {
    let ws = vec![
        Operation::add_value("auction-0", OperationId::new("client-0", clock), ["client-0"], 40),
        Operation::assign_value("e", OperationId::new("client-0", clock), ["p", "client-0"], Some(Value::Bool(true))),
    ];
    let p = Proposal::new(&net.client, LamportClock(clock), "auction", "bid", vec![b"40".to_vec()]);
    let ends: Vec<Endorsement> = net.orgs[..2].iter().map(|o| Endorsement::sign(o, ws.clone())).collect();
    Transaction::assemble(&net.client, p, &ends).unwrap()
}

#[test]
fn byte_flips_in_transactions_are_rejected_or_undecodable() {
    let net = net();
    let policy = EndorsementPolicy::new(2, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for clock in 1..=300 {
        let original = tx(&net, clock);
        assert_eq!(validate_transaction(&original, &policy, &net.registry), Ok(()));
        let mut bytes = original.to_bytes();
        let i = rng.gen_range(0..bytes.len());
        bytes[i] ^= 1 << rng.gen_range(0..8);
        if let Ok(mutated) = Transaction::from_bytes(&bytes) {
            assert_ne!(mutated, original);
            assert!(
                validate_transaction(&mutated, &policy, &net.registry).is_err(),
                "flip at byte {i} still validates"
            );
        }
    }
}

#[test]
fn endorsements_from_one_org_cannot_be_replayed_as_another() {
    let net = net();
    let policy = EndorsementPolicy::new(2, 4).unwrap();
    let mut t = tx(&net, 1);
    t.endorsements[1].org_id = "org-3".into();
    assert!(validate_transaction(&t, &policy, &net.registry).is_err());
}
