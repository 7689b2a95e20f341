//! Hashing, signing and the identity roster.
//!
//! Digests are SHA-256. Signatures are Ed25519 over a 32-byte digest, so a
//! signature always commits to the canonical bytes of whatever was hashed.

use alloc::collections::BTreeMap;
use alloc::string::String;
use core::fmt;

use ed25519_dalek::{Signer as _, SigningKey, Verifier as _, VerifyingKey};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::codec::{Decode, DecodeError, Decoder, Encode, Encoder};

/// A 32-byte SHA-256 digest.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Hash32(pub [u8; 32]);

impl Hash32 {
    pub const ZERO: Hash32 = Hash32([0u8; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Display for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash32({self})")
    }
}

impl Encode for Hash32 {
    fn encode(&self, enc: &mut Encoder<'_>) {
        enc.fixed(&self.0);
    }
}

impl Decode for Hash32 {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Hash32(dec.array()?))
    }
}

pub fn sha256(data: &[u8]) -> Hash32 {
    Hash32(Sha256::digest(data).into())
}

/// Hashes the concatenation of `parts` without materializing it.
pub fn sha256_parts(parts: &[&[u8]]) -> Hash32 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Hash32(h.finalize().into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Organization,
    Client,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Organization => "organization",
            Role::Client => "client",
        }
    }
}

/// A registered participant and its public key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Identity {
    pub id: String,
    pub public_key: [u8; 32],
    pub role: Role,
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Signature {
    pub signer_id: String,
    pub bytes: [u8; 64],
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}, ", self.signer_id)?;
        for b in &self.bytes[..8] {
            write!(f, "{b:02x}")?;
        }
        f.write_str("..)")
    }
}

impl Encode for Signature {
    fn encode(&self, enc: &mut Encoder<'_>) {
        enc.str(&self.signer_id);
        enc.fixed(&self.bytes);
    }
}

impl Decode for Signature {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            signer_id: dec.string()?,
            bytes: dec.array()?,
        })
    }
}

/// An identity together with its private key. Immutable once built.
#[derive(Clone)]
pub struct Signer {
    id: String,
    key: SigningKey,
}

impl Signer {
    /// Builds a signer from a 32-byte secret seed.
    pub fn from_seed(id: impl Into<String>, seed: [u8; 32]) -> Self {
        Self {
            id: id.into(),
            key: SigningKey::from_bytes(&seed),
        }
    }

    /// Derives the secret seed deterministically from a network seed and the
    /// participant id. Only meant for simulations and tests.
    pub fn derive(id: impl Into<String>, network_seed: u64) -> Self {
        let id = id.into();
        let seed = sha256_parts(&[b"orderless-key", &network_seed.to_be_bytes(), id.as_bytes()]);
        Self::from_seed(id, seed.0)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn public_key(&self) -> [u8; 32] {
        self.key.verifying_key().to_bytes()
    }

    pub fn secret_seed(&self) -> [u8; 32] {
        self.key.to_bytes()
    }

    pub fn identity(&self, role: Role) -> Identity {
        Identity {
            id: self.id.clone(),
            public_key: self.public_key(),
            role,
        }
    }

    /// Signs an already computed digest.
    pub fn sign_digest(&self, digest: &Hash32) -> Signature {
        Signature {
            signer_id: self.id.clone(),
            bytes: self.key.sign(&digest.0).to_bytes(),
        }
    }

    /// Hashes `payload` and signs the digest.
    pub fn hash_and_sign(&self, payload: &[u8]) -> (Hash32, Signature) {
        let digest = sha256(payload);
        let sig = self.sign_digest(&digest);
        (digest, sig)
    }
}

impl fmt::Debug for Signer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Signer").field("id", &self.id).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentityError {
    #[error("unknown identity {0}")]
    UnknownIdentity(String),
    #[error("identity {0} is registered with a different key")]
    KeyMismatch(String),
    #[error("identity {0} registered twice")]
    Duplicate(String),
    #[error("invalid public key for {0}")]
    InvalidKey(String),
}

/// Signature checking as seen by protocol code.
pub trait SignatureVerifier {
    fn role_of(&self, id: &str) -> Option<Role>;

    /// True iff `sig` is a valid signature by `signer_id` over `digest`.
    fn verify_digest(&self, signer_id: &str, digest: &Hash32, sig: &Signature) -> bool;

    /// Hashes `payload` canonically and checks the signature over the digest.
    fn verify(&self, signer_id: &str, payload: &[u8], sig: &Signature) -> bool {
        self.verify_digest(signer_id, &sha256(payload), sig)
    }
}

/// The static roster of known identities (the PKI).
#[derive(Debug, Clone, Default)]
pub struct Registry {
    entries: BTreeMap<String, (Identity, VerifyingKey)>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, identity: Identity) -> Result<(), IdentityError> {
        if self.entries.contains_key(&identity.id) {
            return Err(IdentityError::Duplicate(identity.id));
        }
        let key = VerifyingKey::from_bytes(&identity.public_key)
            .map_err(|_| IdentityError::InvalidKey(identity.id.clone()))?;
        self.entries.insert(identity.id.clone(), (identity, key));
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Identity> {
        self.entries.get(id).map(|(i, _)| i)
    }

    pub fn identities(&self) -> impl Iterator<Item = &Identity> {
        self.entries.values().map(|(i, _)| i)
    }

    pub fn organizations(&self) -> impl Iterator<Item = &Identity> {
        self.identities().filter(|i| i.role == Role::Organization)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Signs `payload` after checking the signer is registered under its key.
    pub fn hash_and_sign(
        &self,
        signer: &Signer,
        payload: &[u8],
    ) -> Result<(Hash32, Signature), IdentityError> {
        match self.entries.get(signer.id()) {
            None => Err(IdentityError::UnknownIdentity(signer.id().into())),
            Some((ident, _)) if ident.public_key != signer.public_key() => {
                Err(IdentityError::KeyMismatch(signer.id().into()))
            }
            Some(_) => Ok(signer.hash_and_sign(payload)),
        }
    }
}

impl SignatureVerifier for Registry {
    fn role_of(&self, id: &str) -> Option<Role> {
        self.get(id).map(|i| i.role)
    }

    fn verify_digest(&self, signer_id: &str, digest: &Hash32, sig: &Signature) -> bool {
        if sig.signer_id != signer_id {
            return false;
        }
        let Some((_, key)) = self.entries.get(signer_id) else {
            return false;
        };
        let sig = ed25519_dalek::Signature::from_bytes(&sig.bytes);
        key.verify(&digest.0, &sig).is_ok()
    }
}
