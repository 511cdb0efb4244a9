//! Append-only Merkle log with inclusion and consistency proofs.
//!
//! Hashing follows the usual transparency-log conventions: leaves are
//! `H(0x00 ‖ data)`, interior nodes `H(0x01 ‖ left ‖ right)`, the empty
//! tree hashes to `H("")`, and an `n`-leaf tree splits at the largest power
//! of two below `n`.

mod file;
mod log;

pub use file::{read_log, write_log, LOG_MAGIC, LOG_VERSION};
pub use log::AuditLog;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub type Hash = [u8; 32];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogError {
    #[error("index {index} out of range for log of size {size}")]
    IndexOutOfRange { index: u64, size: u64 },
    #[error("sizes {old}..{new} out of range for log of size {size}")]
    SizeOutOfRange { old: u64, new: u64, size: u64 },
    #[error("cross audit needs at least two replica states")]
    TooFewStates,
    #[error("log file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(String),
}

pub fn leaf_hash(data: &[u8]) -> Hash {
    let mut h = Sha256::new();
    h.update([0u8]);
    h.update(data);
    h.finalize().into()
}

pub fn node_hash(left: &Hash, right: &Hash) -> Hash {
    let mut h = Sha256::new();
    h.update([1u8]);
    h.update(left);
    h.update(right);
    h.finalize().into()
}

pub fn empty_root() -> Hash {
    Sha256::digest([]).into()
}

/// Largest power of two strictly below `n` (n ≥ 2).
pub(crate) fn split_point(n: u64) -> u64 {
    debug_assert!(n >= 2);
    1 << (63 - (n - 1).leading_zeros())
}

pub(crate) mod hex_hash {
    use super::Hash;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(h: &Hash, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(h))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Hash, D::Error> {
        let text = String::deserialize(d)?;
        hex::decode(text)
            .map_err(D::Error::custom)?
            .try_into()
            .map_err(|_| D::Error::custom("hash must be 32 bytes"))
    }
}

/// A signed-off snapshot of a log: its size and root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TreeState {
    pub size: u64,
    #[serde(with = "hex_hash")]
    pub root_hash: Hash,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditPathStep {
    #[serde(with = "hex_hash")]
    pub hash: Hash,
    pub side: Side,
}

/// Sibling hashes from a leaf up to the root; `side` is where the sibling
/// sits relative to the running hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MerkleAuditPath {
    pub leaf_index: u64,
    pub tree_size: u64,
    pub siblings: Vec<AuditPathStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyProof {
    pub old_size: u64,
    pub new_size: u64,
    pub hashes: Vec<AuditPathStep>,
}

/// Recomputes the root from `leaf` along `path`. Fails on any path whose
/// shape does not match its index and the state's size.
pub fn verify_inclusion(state: &TreeState, leaf: &Hash, path: &MerkleAuditPath) -> bool {
    if path.tree_size != state.size || path.leaf_index >= path.tree_size {
        return false;
    }
    let (mut fnode, mut snode) = (path.leaf_index, path.tree_size - 1);
    let mut r = *leaf;
    for step in &path.siblings {
        if snode == 0 {
            return false;
        }
        if fnode & 1 == 1 || fnode == snode {
            if step.side != Side::Left {
                return false;
            }
            r = node_hash(&step.hash, &r);
            if fnode & 1 == 0 {
                while fnode & 1 == 0 && fnode != 0 {
                    fnode >>= 1;
                    snode >>= 1;
                }
            }
        } else {
            if step.side != Side::Right {
                return false;
            }
            r = node_hash(&r, &step.hash);
        }
        fnode >>= 1;
        snode >>= 1;
    }
    snode == 0 && r == state.root_hash
}

/// Checks that `old` is a prefix of `new` according to `proof`.
pub fn verify_consistency(old: &TreeState, new: &TreeState, proof: &ConsistencyProof) -> bool {
    if proof.old_size != old.size || proof.new_size != new.size || old.size > new.size {
        return false;
    }
    if old.size == new.size {
        return proof.hashes.is_empty() && old.root_hash == new.root_hash;
    }
    if old.size == 0 {
        return proof.hashes.is_empty();
    }
    let mut hashes: Vec<Hash> = proof.hashes.iter().map(|s| s.hash).collect();
    if old.size.is_power_of_two() {
        hashes.insert(0, old.root_hash);
    }
    let Some((first, rest)) = hashes.split_first() else {
        return false;
    };
    let (mut fnode, mut snode) = (old.size - 1, new.size - 1);
    while fnode & 1 == 1 {
        fnode >>= 1;
        snode >>= 1;
    }
    let (mut fr, mut sr) = (*first, *first);
    for c in rest {
        if snode == 0 {
            return false;
        }
        if fnode & 1 == 1 || fnode == snode {
            fr = node_hash(c, &fr);
            sr = node_hash(c, &sr);
            if fnode & 1 == 0 {
                while fnode & 1 == 0 && fnode != 0 {
                    fnode >>= 1;
                    snode >>= 1;
                }
            }
        } else {
            sr = node_hash(&sr, c);
        }
        fnode >>= 1;
        snode >>= 1;
    }
    snode == 0 && fr == old.root_hash && sr == new.root_hash
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DivergenceKind {
    RootMismatch,
    SizeMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub replica: usize,
    pub kind: DivergenceKind,
    pub state: TreeState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DivergenceReport {
    /// Index of the replica whose state the others are compared against.
    pub reference: usize,
    pub divergent: Vec<Divergence>,
}

impl DivergenceReport {
    pub fn is_clean(&self) -> bool {
        self.divergent.is_empty()
    }
}

/// Compares replica states against the majority state (ties go to the
/// lowest replica index) and lists every replica that differs.
pub fn cross_audit(states: &[TreeState]) -> Result<DivergenceReport, LogError> {
    if states.len() < 2 {
        return Err(LogError::TooFewStates);
    }
    let count = |s: &TreeState| states.iter().filter(|t| *t == s).count();
    let reference = (0..states.len())
        .max_by(|&a, &b| count(&states[a]).cmp(&count(&states[b])).then(b.cmp(&a)))
        .unwrap();
    let expected = states[reference];
    let divergent = states
        .iter()
        .enumerate()
        .filter(|(_, s)| **s != expected)
        .map(|(replica, s)| Divergence {
            replica,
            kind: if s.size != expected.size {
                DivergenceKind::SizeMismatch
            } else {
                DivergenceKind::RootMismatch
            },
            state: *s,
        })
        .collect();
    Ok(DivergenceReport { reference, divergent })
}
