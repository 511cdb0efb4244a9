use std::collections::{BTreeMap, BTreeSet};

use crate::crypto::SignedEvent;
use crate::engine::GroundAtom;
use crate::merkle::{AuditLog, LogError, MerkleAuditPath, TreeState};

use super::{event_fact, MonitorError};

/// A fact contributed by a log entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedFact {
    pub index: u64,
    pub principal: Option<String>,
    pub atom: GroundAtom,
}

/// The replicated log shared by all monitors. Replica 0 serves proofs;
/// every append goes to all replicas.
#[derive(Debug, Clone)]
pub struct CommonLog {
    replicas: Vec<AuditLog>,
    entries: Vec<SignedEvent>,
    rejected: BTreeSet<u64>,
    facts: BTreeMap<String, Vec<IndexedFact>>,
    online: bool,
}

impl Default for CommonLog {
    fn default() -> Self {
        Self::new(2)
    }
}

impl CommonLog {
    pub fn new(replicas: usize) -> Self {
        CommonLog {
            replicas: (0..replicas.max(1)).map(|_| AuditLog::new()).collect(),
            entries: Vec::new(),
            rejected: BTreeSet::new(),
            facts: BTreeMap::new(),
            online: true,
        }
    }

    pub fn set_online(&mut self, online: bool) {
        self.online = online;
    }

    pub fn is_online(&self) -> bool {
        self.online
    }

    pub fn size(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn append(&mut self, se: &SignedEvent) -> Result<u64, MonitorError> {
        if !self.online {
            return Err(MonitorError::LogUnavailable);
        }
        let record = se.to_record();
        let mut index = 0;
        for r in &mut self.replicas {
            index = r.append_record(record.clone()).0;
        }
        self.entries.push(se.clone());
        if let Some((principal, atom)) = event_fact(se) {
            self.facts.entry(atom.predicate.clone()).or_default().push(IndexedFact {
                index,
                principal,
                atom,
            });
        }
        Ok(index)
    }

    pub fn mark_rejected(&mut self, index: u64) {
        self.rejected.insert(index);
    }

    pub fn is_rejected(&self, index: u64) -> bool {
        self.rejected.contains(&index)
    }

    pub fn entry(&self, index: u64) -> Option<&SignedEvent> {
        self.entries.get(index as usize)
    }

    pub fn entries(&self) -> &[SignedEvent] {
        &self.entries
    }

    /// Facts of `predicate` in log order.
    pub fn facts_of(&self, predicate: &str) -> &[IndexedFact] {
        self.facts.get(predicate).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn state(&self) -> TreeState {
        self.replicas[0].root()
    }

    pub fn inclusion_proof(&self, index: u64) -> Result<MerkleAuditPath, LogError> {
        self.replicas[0].inclusion_proof(index)
    }

    pub fn replicas(&self) -> &[AuditLog] {
        &self.replicas
    }

    /// Flips bits of one stored leaf in one replica, as a dishonest
    /// operator could.
    pub fn tamper(&mut self, replica: usize, leaf: u64, offset: usize, mask: u8) -> Result<(), LogError> {
        let log = self
            .replicas
            .get_mut(replica)
            .ok_or_else(|| LogError::Format(format!("no replica {replica}")))?;
        let size = log.size();
        let mut data = log
            .leaf(leaf)
            .ok_or(LogError::IndexOutOfRange { index: leaf, size })?
            .to_vec();
        if data.is_empty() {
            return Err(LogError::Format(format!("leaf {leaf} is empty")));
        }
        let at = offset % data.len();
        data[at] ^= mask;
        log.rewrite_leaf(leaf, data)
    }

    pub fn hash_count(&self) -> u64 {
        self.replicas.iter().map(AuditLog::hash_count).sum()
    }

    pub fn bytes_appended(&self) -> u64 {
        self.replicas.iter().map(AuditLog::byte_len).sum()
    }
}
