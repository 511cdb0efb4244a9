use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::lang::{Atom, Claim, Term, Value};

/// An atom whose arguments are all constants.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroundAtom {
    pub predicate: String,
    pub args: Vec<Value>,
}

impl GroundAtom {
    pub fn new(predicate: &str, args: Vec<Value>) -> Self {
        GroundAtom {
            predicate: predicate.to_string(),
            args,
        }
    }

    pub fn from_atom(atom: &Atom) -> Result<Self, EngineError> {
        let args = atom
            .args
            .iter()
            .map(|t| t.as_const().cloned())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| EngineError::NonGroundFact(atom.to_string()))?;
        Ok(GroundAtom {
            predicate: atom.predicate.clone(),
            args,
        })
    }

    pub fn to_atom(&self) -> Atom {
        Atom {
            predicate: self.predicate.clone(),
            args: self.args.iter().cloned().map(Term::Const).collect(),
        }
    }
}

impl fmt::Display for GroundAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.to_atom().fmt(f)
    }
}

/// Relation key: predicate plus attesting principal (none for plain facts).
pub type FactKey = (String, Option<String>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestedFact {
    pub principal: Option<String>,
    pub atom: GroundAtom,
    pub revision: u64,
    /// Log index of the signed event that introduced the fact.
    pub source: Option<u64>,
    pub derived: bool,
}

impl AttestedFact {
    /// A base fact observed through the log entry at `source`.
    pub fn observed(principal: Option<&str>, atom: GroundAtom, revision: u64, source: u64) -> Self {
        AttestedFact {
            principal: principal.map(str::to_string),
            atom,
            revision,
            source: Some(source),
            derived: false,
        }
    }

    /// Converts a ground claim; principals are taken by name.
    pub fn from_claim(claim: &Claim, revision: u64, source: Option<u64>, derived: bool) -> Result<Self, EngineError> {
        let principal = match &claim.principal {
            None => None,
            Some(Term::Const(v)) => Some(v.principal_name()),
            Some(_) => return Err(EngineError::NonGroundFact(claim.to_string())),
        };
        Ok(AttestedFact {
            principal,
            atom: GroundAtom::from_atom(&claim.atom)?,
            revision,
            source,
            derived,
        })
    }

    pub fn key(&self) -> FactKey {
        (self.atom.predicate.clone(), self.principal.clone())
    }

    pub fn to_claim(&self) -> Claim {
        Claim {
            principal: self.principal.as_ref().map(|p| Term::str(p)),
            atom: self.atom.to_atom(),
        }
    }
}

impl fmt::Display for AttestedFact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}. % rev={} src=", self.to_claim(), self.revision)?;
        match self.source {
            Some(s) => write!(f, "{s}"),
            None => f.write_str("-"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct FactMeta {
    source: Option<u64>,
    derived: bool,
}

type Tuples = BTreeMap<Vec<Value>, BTreeMap<u64, FactMeta>>;

/// Revisioned fact storage owned by one monitor.
#[derive(Debug, Clone)]
pub struct FactStore {
    relations: BTreeMap<FactKey, Tuples>,
    current_revision: u64,
    protected: BTreeSet<String>,
    protected_prefixes: Vec<String>,
    known: BTreeSet<String>,
    entries: usize,
}

impl Default for FactStore {
    fn default() -> Self {
        FactStore {
            relations: BTreeMap::new(),
            current_revision: 0,
            protected: BTreeSet::new(),
            protected_prefixes: vec!["forbidden".to_string()],
            known: BTreeSet::new(),
            entries: 0,
        }
    }
}

impl FactStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn current_revision(&self) -> u64 {
        self.current_revision
    }

    /// Number of (principal, atom, revision) entries.
    pub fn len(&self) -> usize {
        self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries == 0
    }

    pub fn protect(&mut self, predicate: &str) {
        self.protected.insert(predicate.to_string());
    }

    pub fn set_protected_prefixes(&mut self, prefixes: Vec<String>) {
        self.protected_prefixes = prefixes;
    }

    pub fn is_protected(&self, predicate: &str) -> bool {
        self.protected.contains(predicate) || self.protected_prefixes.iter().any(|p| predicate.starts_with(p.as_str()))
    }

    pub fn declare<'a>(&mut self, predicates: impl IntoIterator<Item = &'a str>) {
        self.known.extend(predicates.into_iter().map(str::to_string));
    }

    pub fn is_known(&self, predicate: &str) -> bool {
        self.known.contains(predicate)
    }

    /// Inserts a fact. Returns `true` when the entry was not already present.
    pub fn assert_fact(&mut self, fact: AttestedFact) -> Result<bool, EngineError> {
        if fact.revision > self.current_revision + 1 {
            return Err(EngineError::RevisionRegression {
                revision: fact.revision,
                current: self.current_revision,
            });
        }
        if !fact.derived && fact.source.is_none() {
            return Err(EngineError::MissingSource(fact.to_claim().to_string()));
        }
        self.known.insert(fact.atom.predicate.clone());
        let revisions = self
            .relations
            .entry(fact.key())
            .or_default()
            .entry(fact.atom.args)
            .or_default();
        if revisions.contains_key(&fact.revision) {
            return Ok(false);
        }
        revisions.insert(
            fact.revision,
            FactMeta {
                source: fact.source,
                derived: fact.derived,
            },
        );
        self.entries += 1;
        self.current_revision = self.current_revision.max(fact.revision);
        Ok(true)
    }

    /// Whether the claim holds at any retained revision.
    pub fn contains(&self, principal: Option<&str>, atom: &GroundAtom) -> bool {
        self.relations
            .get(&(atom.predicate.clone(), principal.map(str::to_string)))
            .is_some_and(|t| t.contains_key(&atom.args))
    }

    /// All stored entries in key order.
    pub fn facts(&self) -> impl Iterator<Item = AttestedFact> + '_ {
        self.relations.iter().flat_map(|((pred, principal), tuples)| {
            tuples.iter().flat_map(move |(args, revs)| {
                revs.iter().map(move |(rev, meta)| AttestedFact {
                    principal: principal.clone(),
                    atom: GroundAtom {
                        predicate: pred.clone(),
                        args: args.clone(),
                    },
                    revision: *rev,
                    source: meta.source,
                    derived: meta.derived,
                })
            })
        })
    }

    pub(crate) fn relations(&self) -> impl Iterator<Item = (&FactKey, impl Iterator<Item = &Vec<Value>>)> {
        self.relations.iter().map(|(k, t)| (k, t.keys()))
    }

    /// Drops entries older than `keep_from` unless their predicate is
    /// protected. Returns the number of entries removed.
    pub fn compact_revisions(&mut self, keep_from: u64) -> usize {
        let keep_from = keep_from.min(self.current_revision);
        let mut removed = 0;
        let protected: Vec<bool> = self.relations.keys().map(|(p, _)| self.is_protected(p)).collect();
        for ((_, tuples), keep) in self.relations.iter_mut().zip(protected) {
            if keep {
                continue;
            }
            tuples.retain(|_, revs| {
                let before = revs.len();
                revs.retain(|rev, _| *rev >= keep_from);
                removed += before - revs.len();
                !revs.is_empty()
            });
        }
        self.relations.retain(|_, t| !t.is_empty());
        self.entries -= removed;
        removed
    }

    /// One line per entry: `principal attests atom. % rev=N src=K`.
    pub fn dump(&self) -> String {
        self.facts().map(|f| format!("{f}\n")).collect()
    }
}
