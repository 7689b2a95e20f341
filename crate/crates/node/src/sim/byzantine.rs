//! Scheduled Byzantine behavior of organizations.

use std::collections::BTreeMap;

use orderless_core::crypto::sha256;
use orderless_core::{Operation, Value};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    DropProposals,
    DropCommits,
    CorruptEndorsements,
    SuppressGossip,
}

impl Behavior {
    pub const ALL: [Behavior; 4] = [
        Behavior::DropProposals,
        Behavior::DropCommits,
        Behavior::CorruptEndorsements,
        Behavior::SuppressGossip,
    ];
}

/// `[start_s, end_s)` during which `behaviors` may fire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start_s: f64,
    pub end_s: f64,
    pub behaviors: Vec<Behavior>,
}

impl Window {
    pub fn contains(&self, now: SimTime) -> bool {
        let s = now as f64 / 1e6;
        self.start_s <= s && s < self.end_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ByzantineSchedule {
    pub windows: BTreeMap<String, Vec<Window>>,
    /// Chance that an active behavior fires for a given message.
    pub activation_probability: f64,
    /// When set, every corrupting organization applies the same rewrite,
    /// so their endorsements agree with each other.
    pub collusion_salt: Option<u64>,
}

impl Default for ByzantineSchedule {
    fn default() -> Self {
        Self {
            windows: BTreeMap::new(),
            activation_probability: 0.5,
            collusion_salt: None,
        }
    }
}

/// What happens to a message at a faulty organization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Intercept {
    Forward,
    Drop,
    Corrupt(u64),
}

/// Message classes the schedule distinguishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageClass {
    Proposal,
    Commit,
    Gossip,
    Other,
}

impl ByzantineSchedule {
    pub fn is_empty(&self) -> bool {
        self.windows.values().all(Vec::is_empty)
    }

    pub fn add(&mut self, org: &str, window: Window) {
        self.windows.entry(org.into()).or_default().push(window);
    }

    pub fn check(&self, horizon_s: f64) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.activation_probability) {
            return Err("activation probability must be within [0, 1]".into());
        }
        for (org, ws) in &self.windows {
            for w in ws {
                if !(0.0 <= w.start_s && w.start_s <= w.end_s && w.end_s <= horizon_s) {
                    return Err(format!("window [{}, {}) of {org} outside [0, {horizon_s}]", w.start_s, w.end_s));
                }
            }
        }
        Ok(())
    }

    pub fn active(&self, org: &str, behavior: Behavior, now: SimTime) -> bool {
        self.windows
            .get(org)
            .is_some_and(|ws| ws.iter().any(|w| w.contains(now) && w.behaviors.contains(&behavior)))
    }

    /// Organizations faulty at some point of the schedule.
    pub fn faulty(&self) -> impl Iterator<Item = &String> {
        self.windows.iter().filter(|(_, ws)| !ws.is_empty()).map(|(o, _)| o)
    }

    fn fires(&self, org: &str, behavior: Behavior, now: SimTime, rng: &mut impl Rng) -> bool {
        self.active(org, behavior, now) && rng.gen_bool(self.activation_probability)
    }

    pub fn salt(&self, org: &str) -> u64 {
        self.collusion_salt.unwrap_or_else(|| {
            let d = sha256(org.as_bytes());
            u64::from_be_bytes(d.0[..8].try_into().expect("8 bytes"))
        })
    }

    /// Decides the fate of a message of `class` handled by `org` at `now`.
    pub fn intercept(&self, org: &str, class: MessageClass, now: SimTime, rng: &mut impl Rng) -> Intercept {
        if self.windows.get(org).is_none() {
            return Intercept::Forward;
        }
        let behavior = match class {
            MessageClass::Proposal => {
                if self.fires(org, Behavior::DropProposals, now, rng) {
                    return Intercept::Drop;
                }
                Behavior::CorruptEndorsements
            }
            MessageClass::Commit => Behavior::DropCommits,
            MessageClass::Gossip => Behavior::SuppressGossip,
            MessageClass::Other => return Intercept::Forward,
        };
        match (behavior, self.fires(org, behavior, now, rng)) {
            (_, false) => Intercept::Forward,
            (Behavior::CorruptEndorsements, true) => Intercept::Corrupt(self.salt(org)),
            (_, true) => Intercept::Drop,
        }
    }
}

/// Deterministic rewrite of a write-set. Keeps every operation well formed
/// (counter increments stay positive) but changes its bytes.
pub fn corrupt_write_set(ops: &mut [Operation], salt: u64) {
    let bump = 1 + (salt % 97) as i64;
    for op in ops {
        op.value = Some(match op.value.take() {
            Some(Value::Int(v)) if v > 0 => Value::Int(v.saturating_add(bump)),
            Some(Value::Int(v)) => Value::Int(v.wrapping_sub(bump)),
            Some(Value::Bool(b)) => Value::Bool(!b),
            Some(Value::Bytes(mut b)) => {
                b.push(salt as u8);
                Value::Bytes(b)
            }
            None => Value::Int(bump),
        });
    }
}
