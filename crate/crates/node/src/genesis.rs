//! Network roster: who is an organization, who is a client, and their keys.

use std::path::Path;

use orderless_core::{EndorsementPolicy, Identity, IdentityError, Registry, Role, Signer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GenesisError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed genesis file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad public key for {0}")]
    BadKey(String),
    #[error("unknown role {0}")]
    BadRole(String),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error("invalid endorsement policy {q} of {n}")]
    Policy { q: usize, n: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub id: String,
    pub role: String,
    pub public_key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Genesis {
    pub q: usize,
    pub roster: Vec<RosterEntry>,
}

pub fn org_id(i: usize) -> String {
    format!("org-{i}")
}

pub fn client_id(i: usize) -> String {
    format!("client-{i}")
}

/// Deterministic keys for `orgs` organizations and `clients` clients.
#[derive(Debug, Clone)]
pub struct Keyring {
    pub orgs: Vec<Signer>,
    pub clients: Vec<Signer>,
}

impl Keyring {
    pub fn derive(orgs: usize, clients: usize, network_seed: u64) -> Self {
        Self {
            orgs: (0..orgs).map(|i| Signer::derive(org_id(i), network_seed)).collect(),
            clients: (0..clients).map(|i| Signer::derive(client_id(i), network_seed)).collect(),
        }
    }

    pub fn genesis(&self, q: usize) -> Genesis {
        let entry = |s: &Signer, role: Role| RosterEntry {
            id: s.id().into(),
            role: role.name().into(),
            public_key: hex::encode(s.public_key()),
        };
        Genesis {
            q,
            roster: self
                .orgs
                .iter()
                .map(|s| entry(s, Role::Organization))
                .chain(self.clients.iter().map(|s| entry(s, Role::Client)))
                .collect(),
        }
    }

    pub fn registry(&self) -> Registry {
        let mut reg = Registry::new();
        for s in &self.orgs {
            reg.register(s.identity(Role::Organization)).expect("derived ids are unique");
        }
        for s in &self.clients {
            reg.register(s.identity(Role::Client)).expect("derived ids are unique");
        }
        reg
    }
}

impl Genesis {
    pub fn registry(&self) -> Result<Registry, GenesisError> {
        let mut reg = Registry::new();
        for e in &self.roster {
            let role = match e.role.as_str() {
                "organization" => Role::Organization,
                "client" => Role::Client,
                other => return Err(GenesisError::BadRole(other.into())),
            };
            let key: [u8; 32] = hex::decode(&e.public_key)
                .ok()
                .and_then(|b| b.try_into().ok())
                .ok_or_else(|| GenesisError::BadKey(e.id.clone()))?;
            reg.register(Identity {
                id: e.id.clone(),
                public_key: key,
                role,
            })?;
        }
        Ok(reg)
    }

    pub fn policy(&self) -> Result<EndorsementPolicy, GenesisError> {
        let n = self.roster.iter().filter(|e| e.role == "organization").count();
        EndorsementPolicy::new(self.q, n).map_err(|_| GenesisError::Policy { q: self.q, n })
    }

    pub fn load(path: &Path) -> Result<Self, GenesisError> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), GenesisError> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}
