pub mod genesis;
pub mod ledger;
pub mod message;
pub mod node;
pub mod bench;
pub mod client;
pub mod sim;
pub mod transport;
