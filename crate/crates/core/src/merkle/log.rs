use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{
    empty_root, leaf_hash, node_hash, split_point, AuditPathStep, ConsistencyProof, Hash, LogError, MerkleAuditPath,
    Side, TreeState,
};
use crate::crypto::SignedEvent;

/// An append-only Merkle log. Hashes of complete, aligned subtrees are
/// cached as leaves arrive, so roots and proofs cost O(log n) hashes.
#[derive(Debug, Default)]
pub struct AuditLog {
    leaves: Vec<Vec<u8>>,
    /// (level, index) to the hash of leaves `[index << level, (index + 1) << level)`.
    cache: HashMap<(u32, u64), Hash>,
    hashes: AtomicU64,
}

impl Clone for AuditLog {
    fn clone(&self) -> Self {
        AuditLog {
            leaves: self.leaves.clone(),
            cache: self.cache.clone(),
            hashes: AtomicU64::new(self.hash_count()),
        }
    }
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn size(&self) -> u64 {
        self.leaves.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn leaf(&self, index: u64) -> Option<&[u8]> {
        self.leaves.get(index as usize).map(Vec::as_slice)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &[u8]> {
        self.leaves.iter().map(Vec::as_slice)
    }

    /// SHA-256 invocations performed so far.
    pub fn hash_count(&self) -> u64 {
        self.hashes.load(Ordering::Relaxed)
    }

    /// Total bytes of leaf data.
    pub fn byte_len(&self) -> u64 {
        self.leaves.iter().map(|l| l.len() as u64).sum()
    }

    fn count(&self, n: u64) {
        self.hashes.fetch_add(n, Ordering::Relaxed);
    }

    pub fn append(&mut self, se: &SignedEvent) -> (u64, Hash) {
        self.append_record(se.to_record())
    }

    pub fn append_record(&mut self, data: Vec<u8>) -> (u64, Hash) {
        let index = self.size();
        self.leaves.push(data);
        let h = self.cache_leaf(index);
        (index, h)
    }

    fn cache_leaf(&mut self, index: u64) -> Hash {
        let h = leaf_hash(&self.leaves[index as usize]);
        self.count(1);
        self.cache.insert((0, index), h);
        let mut level = 0;
        let mut i = index;
        while i & 1 == 1 {
            let left = self.cache[&(level, i - 1)];
            let right = self.cache[&(level, i)];
            let parent = node_hash(&left, &right);
            self.count(1);
            level += 1;
            i >>= 1;
            self.cache.insert((level, i), parent);
        }
        h
    }

    /// Replaces a leaf in place, as a misbehaving log operator could.
    pub fn rewrite_leaf(&mut self, index: u64, data: Vec<u8>) -> Result<(), LogError> {
        let size = self.size();
        if index >= size {
            return Err(LogError::IndexOutOfRange { index, size });
        }
        let leaves = std::mem::take(&mut self.leaves);
        self.cache.clear();
        for (i, leaf) in leaves.into_iter().enumerate() {
            self.leaves.push(if i as u64 == index { data.clone() } else { leaf });
            self.cache_leaf(i as u64);
        }
        Ok(())
    }

    pub fn leaf_hash(&self, index: u64) -> Option<Hash> {
        self.cache.get(&(0, index)).copied()
    }

    /// Hash of leaves `[start, start + n)`.
    fn subtree(&self, start: u64, n: u64) -> Hash {
        if n == 0 {
            self.count(1);
            return empty_root();
        }
        if n.is_power_of_two() && start.is_multiple_of(n) {
            return self.cache[&(n.trailing_zeros(), start / n)];
        }
        let k = split_point(n);
        let left = self.subtree(start, k);
        let right = self.subtree(start + k, n - k);
        self.count(1);
        node_hash(&left, &right)
    }

    pub fn root(&self) -> TreeState {
        self.state_at(self.size()).expect("current size is in range")
    }

    /// Root of the log's first `size` leaves.
    pub fn state_at(&self, size: u64) -> Result<TreeState, LogError> {
        if size > self.size() {
            return Err(LogError::SizeOutOfRange {
                old: size,
                new: size,
                size: self.size(),
            });
        }
        Ok(TreeState {
            size,
            root_hash: self.subtree(0, size),
        })
    }

    pub fn inclusion_proof(&self, index: u64) -> Result<MerkleAuditPath, LogError> {
        self.inclusion_proof_at(index, self.size())
    }

    /// Audit path for `index` within the tree of the first `size` leaves.
    pub fn inclusion_proof_at(&self, index: u64, size: u64) -> Result<MerkleAuditPath, LogError> {
        if size > self.size() {
            return Err(LogError::SizeOutOfRange {
                old: size,
                new: size,
                size: self.size(),
            });
        }
        if index >= size {
            return Err(LogError::IndexOutOfRange { index, size });
        }
        let mut siblings = Vec::new();
        self.path(index, 0, size, &mut siblings);
        Ok(MerkleAuditPath {
            leaf_index: index,
            tree_size: size,
            siblings,
        })
    }

    fn path(&self, m: u64, start: u64, n: u64, out: &mut Vec<AuditPathStep>) {
        if n <= 1 {
            return;
        }
        let k = split_point(n);
        if m < k {
            self.path(m, start, k, out);
            out.push(AuditPathStep {
                hash: self.subtree(start + k, n - k),
                side: Side::Right,
            });
        } else {
            self.path(m - k, start + k, n - k, out);
            out.push(AuditPathStep {
                hash: self.subtree(start, k),
                side: Side::Left,
            });
        }
    }

    pub fn consistency_proof(&self, old_size: u64, new_size: u64) -> Result<ConsistencyProof, LogError> {
        if old_size == 0 || old_size > new_size || new_size > self.size() {
            return Err(LogError::SizeOutOfRange {
                old: old_size,
                new: new_size,
                size: self.size(),
            });
        }
        let mut hashes = Vec::new();
        self.subproof(old_size, 0, new_size, true, &mut hashes);
        Ok(ConsistencyProof {
            old_size,
            new_size,
            hashes,
        })
    }

    fn subproof(&self, m: u64, start: u64, n: u64, complete: bool, out: &mut Vec<AuditPathStep>) {
        if m == n {
            if !complete {
                out.push(AuditPathStep {
                    hash: self.subtree(start, n),
                    side: Side::Left,
                });
            }
            return;
        }
        let k = split_point(n);
        if m <= k {
            self.subproof(m, start, k, complete, out);
            out.push(AuditPathStep {
                hash: self.subtree(start + k, n - k),
                side: Side::Right,
            });
        } else {
            self.subproof(m - k, start + k, n - k, false, out);
            out.push(AuditPathStep {
                hash: self.subtree(start, k),
                side: Side::Left,
            });
        }
    }
}
