//! Principal identities, canonical event encoding and ed25519 signatures.

use std::collections::BTreeMap;
use std::fmt;

use ed25519_dalek::{Signature, Signer, Verifier, VerifyingKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::GroundAtom;
use crate::lang::Value;

pub const SIGNATURE_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("principal `{0}` is already registered")]
    DuplicatePrincipal(String),
    #[error("principal `{0}` is not registered")]
    UnknownPrincipal(String),
    #[error("key of `{key_owner}` cannot sign for sender `{sender}`")]
    KeyPrincipalMismatch { key_owner: String, sender: String },
    #[error("principal names must be non-empty and contain no whitespace")]
    InvalidName,
    #[error("malformed encoding: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Principal {
    pub name: String,
    pub public_key: [u8; 32],
}

/// Private half of a principal's keypair. Held only by its owner.
pub struct SigningKey {
    owner: String,
    key: ed25519_dalek::SigningKey,
}

impl SigningKey {
    pub fn owner(&self) -> &str {
        &self.owner
    }

    /// Signs arbitrary bytes. Used to model an attacker signing an event
    /// that claims another sender.
    pub fn sign_raw(&self, bytes: &[u8]) -> [u8; SIGNATURE_LEN] {
        self.key.sign(bytes).to_bytes()
    }
}

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigningKey").field("owner", &self.owner).finish_non_exhaustive()
    }
}

/// Derives a per-principal 32-byte key seed from a simulation seed.
pub fn derive_seed(seed: u64, name: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"auditrv-key");
    h.update(seed.to_be_bytes());
    h.update(name.as_bytes());
    h.finalize().into()
}

/// Name to public key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyRegistry {
    keys: BTreeMap<String, VerifyingKey>,
}

impl KeyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, principal: &Principal) -> Result<(), CryptoError> {
        check_name(&principal.name)?;
        if self.keys.contains_key(&principal.name) {
            return Err(CryptoError::DuplicatePrincipal(principal.name.clone()));
        }
        let key = VerifyingKey::from_bytes(&principal.public_key)
            .map_err(|e| CryptoError::Malformed(format!("public key of {}: {e}", principal.name)))?;
        self.keys.insert(principal.name.clone(), key);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.keys.contains_key(name)
    }

    pub fn public_key(&self, name: &str) -> Option<[u8; 32]> {
        self.keys.get(name).map(VerifyingKey::to_bytes)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.keys.keys().map(String::as_str)
    }

    /// `name hex(public_key)` per line, sorted by name.
    pub fn to_text(&self) -> String {
        self.keys
            .iter()
            .map(|(n, k)| format!("{n} {}\n", hex::encode(k.to_bytes())))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self, CryptoError> {
        let mut reg = KeyRegistry::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| CryptoError::Malformed(format!("registry line {}: {what}", i + 1));
            let (name, key) = line.split_once(' ').ok_or_else(|| bad("expected `name hex`"))?;
            let bytes: [u8; 32] = hex::decode(key.trim())
                .map_err(|_| bad("bad hex"))?
                .try_into()
                .map_err(|_| bad("public key must be 32 bytes"))?;
            reg.register(&Principal {
                name: name.to_string(),
                public_key: bytes,
            })?;
        }
        Ok(reg)
    }
}

fn check_name(name: &str) -> Result<(), CryptoError> {
    if name.is_empty() || name.chars().any(char::is_whitespace) {
        return Err(CryptoError::InvalidName);
    }
    Ok(())
}

/// Creates a deterministic keypair from `seed` and registers the principal.
pub fn generate_principal(
    reg: &mut KeyRegistry,
    name: &str,
    seed: &[u8; 32],
) -> Result<(Principal, SigningKey), CryptoError> {
    let key = ed25519_dalek::SigningKey::from_bytes(seed);
    let principal = Principal {
        name: name.to_string(),
        public_key: key.verifying_key().to_bytes(),
    };
    reg.register(&principal)?;
    Ok((
        principal,
        SigningKey {
            owner: name.to_string(),
            key,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub session_id: u64,
    pub kind: String,
    pub path: String,
    pub payload: GroundAtom,
    pub sender: String,
    pub receiver: String,
    pub lamport_ts: u64,
    pub wall_ts: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignedEvent {
    pub event: Event,
    pub signer: String,
    #[serde(with = "hex_sig")]
    pub signature: [u8; SIGNATURE_LEN],
}

mod hex_sig {
    use super::SIGNATURE_LEN;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(sig: &[u8; SIGNATURE_LEN], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(sig))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; SIGNATURE_LEN], D::Error> {
        let text = String::deserialize(d)?;
        hex::decode(text)
            .map_err(D::Error::custom)?
            .try_into()
            .map_err(|_| D::Error::custom("signature must be 64 bytes"))
    }
}

impl SignedEvent {
    /// Log record: `canonical_bytes(event) ‖ signature`. The signer is
    /// implied by the event's sender.
    pub fn to_record(&self) -> Vec<u8> {
        let mut out = canonical_bytes(&self.event);
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn from_record(bytes: &[u8]) -> Result<Self, CryptoError> {
        let (event, used) = decode_event(bytes)?;
        let signature: [u8; SIGNATURE_LEN] = bytes[used..]
            .try_into()
            .map_err(|_| CryptoError::Malformed(format!("expected {SIGNATURE_LEN} signature bytes after event")))?;
        Ok(SignedEvent {
            signer: event.sender.clone(),
            event,
            signature,
        })
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_be_bytes());
}

const TAG_SYM: u8 = 0;
const TAG_INT: u8 = 1;
const TAG_STR: u8 = 2;

/// Deterministic encoding: fields in declaration order, strings as u32 BE
/// length plus UTF-8, integers as 8 bytes BE, payload as predicate, arity
/// and tagged arguments.
pub fn canonical_bytes(e: &Event) -> Vec<u8> {
    let mut out = Vec::with_capacity(128);
    put_u64(&mut out, e.session_id);
    put_str(&mut out, &e.kind);
    put_str(&mut out, &e.path);
    put_str(&mut out, &e.payload.predicate);
    put_u64(&mut out, e.payload.args.len() as u64);
    for v in &e.payload.args {
        match v {
            Value::Sym(s) => {
                out.push(TAG_SYM);
                put_str(&mut out, s);
            }
            Value::Int(i) => {
                out.push(TAG_INT);
                out.extend_from_slice(&i.to_be_bytes());
            }
            Value::Str(s) => {
                out.push(TAG_STR);
                put_str(&mut out, s);
            }
        }
    }
    put_str(&mut out, &e.sender);
    put_str(&mut out, &e.receiver);
    put_u64(&mut out, e.lamport_ts);
    put_u64(&mut out, e.wall_ts);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CryptoError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CryptoError::Malformed(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64, CryptoError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String, CryptoError> {
        let len = u32::from_be_bytes(self.take(4)?.try_into().unwrap()) as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| CryptoError::Malformed("invalid UTF-8".into()))
    }
}

/// Inverse of [`canonical_bytes`]; returns the event and the bytes consumed.
pub fn decode_event(bytes: &[u8]) -> Result<(Event, usize), CryptoError> {
    let mut r = Reader { bytes, pos: 0 };
    let session_id = r.u64()?;
    let kind = r.str()?;
    let path = r.str()?;
    let predicate = r.str()?;
    let arity = r.u64()?;
    let mut args = Vec::new();
    for _ in 0..arity {
        let tag = r.take(1)?[0];
        args.push(match tag {
            TAG_SYM => Value::Sym(r.str()?),
            TAG_INT => Value::Int(i64::from_be_bytes(r.take(8)?.try_into().unwrap())),
            TAG_STR => Value::Str(r.str()?),
            t => return Err(CryptoError::Malformed(format!("unknown value tag {t}"))),
        });
    }
    let event = Event {
        session_id,
        kind,
        path,
        payload: GroundAtom { predicate, args },
        sender: r.str()?,
        receiver: r.str()?,
        lamport_ts: r.u64()?,
        wall_ts: r.u64()?,
    };
    Ok((event, r.pos))
}

pub fn sign_event(key: &SigningKey, e: Event) -> Result<SignedEvent, CryptoError> {
    if key.owner != e.sender {
        return Err(CryptoError::KeyPrincipalMismatch {
            key_owner: key.owner.clone(),
            sender: e.sender,
        });
    }
    let signature = key.sign_raw(&canonical_bytes(&e));
    Ok(SignedEvent {
        signer: key.owner.clone(),
        event: e,
        signature,
    })
}

/// True iff the signer is the event's sender and the signature is valid
/// under the signer's registered key.
pub fn verify_event(reg: &KeyRegistry, se: &SignedEvent) -> Result<bool, CryptoError> {
    let key = reg
        .keys
        .get(&se.signer)
        .ok_or_else(|| CryptoError::UnknownPrincipal(se.signer.clone()))?;
    if se.signer != se.event.sender {
        return Ok(false);
    }
    let sig = Signature::from_bytes(&se.signature);
    Ok(key.verify(&canonical_bytes(&se.event), &sig).is_ok())
}
