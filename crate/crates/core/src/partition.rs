//! Splits a global program into per-monitor rule subsets.
//!
//! Each root rule (a violation rule, or one whose head no rule reads) is
//! placed at the principal observing its trigger literal: the attested
//! positive literal of highest stratum, rightmost on ties. The dependency
//! closure of its body follows it. A predicate the placing monitor cannot
//! compute from its own observations is received from a monitor that can,
//! or, failing that, its base inputs are forwarded to it.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::{stratify, Claim, LangError, Literal, Rule, RuleSet, Term, ValidatedRuleSet, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PartitionError {
    #[error("`{predicate}` on path {path} is observed by no principal")]
    UncoveredPredicate { predicate: String, path: String },
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error(transparent)]
    Lang(#[from] LangError),
    #[error("topology: {0}")]
    Topology(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Observed {
    pub kind: String,
    pub path: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub principals: Vec<String>,
    /// Event kinds and paths each principal sends or receives.
    pub observes: BTreeMap<String, BTreeSet<Observed>>,
    /// Event path to justification goal predicate.
    #[serde(default)]
    pub justification_goals: BTreeMap<String, String>,
}

impl Topology {
    pub fn load(path: &Path) -> Result<Self, PartitionError> {
        let text = fs::read_to_string(path).map_err(|e| PartitionError::Topology(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, PartitionError> {
        let topo: Topology = serde_json::from_str(text).map_err(|e| PartitionError::Topology(e.to_string()))?;
        if let Some(p) = topo.observes.keys().find(|p| !topo.principals.contains(p)) {
            return Err(PartitionError::Topology(format!("undeclared principal `{p}`")));
        }
        Ok(topo)
    }

    /// A topology with one principal observing everything listed.
    pub fn single(principal: &str, observes: BTreeSet<Observed>) -> Self {
        Topology {
            principals: vec![principal.to_string()],
            observes: BTreeMap::from([(principal.to_string(), observes)]),
            justification_goals: BTreeMap::new(),
        }
    }

    fn observes(&self, principal: &str, kind: &str, path: Option<&str>) -> bool {
        self.observes
            .get(principal)
            .is_some_and(|set| set.iter().any(|o| o.kind == kind && path.is_none_or(|p| o.path == p)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SharedPredicate {
    pub predicate: String,
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionResult {
    pub assignments: BTreeMap<String, ValidatedRuleSet>,
    pub shared: BTreeSet<SharedPredicate>,
}

impl PartitionResult {
    /// Program text for one monitor, with original rule ids as comments.
    pub fn render(&self, principal: &str) -> Option<String> {
        let rs = &self.assignments.get(principal)?.rules;
        let mut out = String::new();
        for f in &rs.facts {
            out.push_str(&format!("{f}.\n"));
        }
        for r in &rs.rules {
            out.push_str(&format!("% id={}\n{r}\n", r.id));
        }
        Some(out)
    }
}

fn predicates_of(rs: &RuleSet) -> BTreeSet<&str> {
    rs.rules
        .iter()
        .flat_map(|r| std::iter::once(r.head.predicate()).chain(r.body_predicates().map(|(p, _)| p)))
        .chain(rs.facts.iter().map(Claim::predicate))
        .collect()
}

/// Rules needed to compute the full extension of `predicate`.
pub fn dependency_closure(rs: &RuleSet, predicate: &str) -> Result<RuleSet, PartitionError> {
    if !predicates_of(rs).contains(predicate) {
        return Err(PartitionError::UnknownPredicate(predicate.to_string()));
    }
    let mut seen = BTreeSet::from([predicate.to_string()]);
    let mut queue = VecDeque::from([predicate.to_string()]);
    while let Some(p) = queue.pop_front() {
        for r in rs.rules.iter().filter(|r| r.head.predicate() == p) {
            for (q, _) in r.body_predicates() {
                if seen.insert(q.to_string()) {
                    queue.push_back(q.to_string());
                }
            }
        }
    }
    Ok(RuleSet {
        rules: rs.rules.iter().filter(|r| seen.contains(r.head.predicate())).cloned().collect(),
        facts: rs.facts.iter().filter(|f| seen.contains(f.predicate())).cloned().collect(),
    })
}

struct Planner<'a> {
    rs: &'a ValidatedRuleSet,
    topo: &'a Topology,
    derived: BTreeSet<&'a str>,
    assigned: BTreeMap<String, BTreeSet<usize>>,
    shared: BTreeSet<SharedPredicate>,
    /// (monitor, predicate) requirements already planned.
    planned: BTreeSet<(String, String)>,
    live: BTreeMap<String, BTreeSet<String>>,
}

fn literal_path(c: &Claim) -> Option<&str> {
    match c.atom.args.first() {
        Some(Term::Const(Value::Str(p))) | Some(Term::Const(Value::Sym(p))) => Some(p.as_str()),
        _ => None,
    }
}

impl<'a> Planner<'a> {
    /// Principals whose monitors hold facts matching a base literal.
    fn sources(&self, c: &Claim) -> Result<BTreeSet<String>, PartitionError> {
        let Some(principal) = &c.principal else {
            return Ok(BTreeSet::new());
        };
        let path = literal_path(c);
        let uncovered = || PartitionError::UncoveredPredicate {
            predicate: c.predicate().to_string(),
            path: path.unwrap_or("_").to_string(),
        };
        match principal {
            Term::Const(v) => {
                let p = v.principal_name();
                if self.topo.observes(&p, c.predicate(), path) {
                    Ok(BTreeSet::from([p]))
                } else {
                    Err(uncovered())
                }
            }
            _ => {
                let set: BTreeSet<String> = self
                    .topo
                    .principals
                    .iter()
                    .filter(|p| self.topo.observes(p, c.predicate(), path))
                    .cloned()
                    .collect();
                if set.is_empty() {
                    Err(uncovered())
                } else {
                    Ok(set)
                }
            }
        }
    }

    fn rules_for(&self, predicate: &str) -> impl Iterator<Item = &'a Rule> + '_ {
        let p = predicate.to_string();
        self.rs.rules.rules.iter().filter(move |r| r.head.predicate() == p)
    }

    /// Greatest set of derived predicates computable at `m` from its own
    /// observations.
    fn compute_live(&self, m: &str) -> Result<BTreeSet<String>, PartitionError> {
        let mut live: BTreeSet<String> = self.derived.iter().map(|p| p.to_string()).collect();
        loop {
            let mut changed = false;
            for p in live.clone() {
                let mut ok = true;
                for r in self.rules_for(&p) {
                    for lit in &r.body {
                        let Some(c) = lit.claim() else { continue };
                        let fine = if self.derived.contains(c.predicate()) {
                            live.contains(c.predicate())
                        } else {
                            self.sources(c)?.iter().all(|s| s == m)
                        };
                        ok &= fine;
                    }
                }
                if !ok {
                    live.remove(&p);
                    changed = true;
                }
            }
            if !changed {
                return Ok(live);
            }
        }
    }

    fn is_live(&mut self, m: &str, predicate: &str) -> Result<bool, PartitionError> {
        if !self.live.contains_key(m) {
            let l = self.compute_live(m)?;
            self.live.insert(m.to_string(), l);
        }
        Ok(self.live[m].contains(predicate))
    }

    fn assign_closure(&mut self, m: &str, predicate: &str) -> Result<(), PartitionError> {
        let closure = dependency_closure(&self.rs.rules, predicate)?;
        self.assigned.entry(m.to_string()).or_default().extend(closure.rules.iter().map(|r| r.id));
        Ok(())
    }

    /// Makes the body literals of `rule` available at monitor `m`.
    fn require_rule(&mut self, m: &str, rule: &Rule) -> Result<(), PartitionError> {
        for lit in &rule.body {
            let Some(c) = lit.claim() else { continue };
            if self.derived.contains(c.predicate()) {
                self.require_derived(m, c.predicate())?;
            } else {
                for s in self.sources(c)? {
                    if s != m {
                        self.shared.insert(SharedPredicate {
                            predicate: c.predicate().to_string(),
                            from: s,
                            to: m.to_string(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn require_derived(&mut self, m: &str, predicate: &str) -> Result<(), PartitionError> {
        if !self.planned.insert((m.to_string(), predicate.to_string())) {
            return Ok(());
        }
        self.assign_closure(m, predicate)?;
        if !self.is_live(m, predicate)? {
            if let Some(producer) = self.producer(predicate)? {
                self.shared.insert(SharedPredicate {
                    predicate: predicate.to_string(),
                    from: producer.clone(),
                    to: m.to_string(),
                });
                return self.require_derived(&producer, predicate);
            }
        }
        let rules: Vec<&Rule> = self.rules_for(predicate).collect();
        for r in rules {
            self.require_rule(m, r)?;
        }
        Ok(())
    }

    /// A principal that can compute `predicate` alone, preferring the
    /// principal its rules attest under.
    fn producer(&mut self, predicate: &str) -> Result<Option<String>, PartitionError> {
        let heads: BTreeSet<Option<String>> = self
            .rules_for(predicate)
            .map(|r| match &r.head.principal {
                Some(Term::Const(v)) => Some(v.principal_name()),
                _ => None,
            })
            .collect();
        if let [Some(p)] = heads.iter().collect::<Vec<_>>().as_slice() {
            if self.topo.principals.contains(p) && self.is_live(p, predicate)? {
                return Ok(Some(p.clone()));
            }
        }
        for p in self.topo.principals.clone() {
            if self.is_live(&p, predicate)? {
                return Ok(Some(p));
            }
        }
        Ok(None)
    }

    fn owner(&self, rule: &Rule, strata: &BTreeMap<String, usize>) -> Result<String, PartitionError> {
        let mut trigger: Option<(&Claim, usize)> = None;
        for lit in &rule.body {
            if let Literal::Pos(c) = lit {
                if c.principal.is_some() {
                    let s = strata.get(c.predicate()).copied().unwrap_or(0);
                    if trigger.is_none_or(|(_, best)| s >= best) {
                        trigger = Some((c, s));
                    }
                }
            }
        }
        let fallback = || {
            self.topo
                .principals
                .first()
                .cloned()
                .ok_or_else(|| PartitionError::Topology("no principals".into()))
        };
        match trigger {
            Some((c, _)) => match &c.principal {
                Some(Term::Const(v)) => Ok(v.principal_name()),
                _ if self.derived.contains(c.predicate()) => fallback(),
                _ => Ok(self.sources(c)?.into_iter().next().expect("sources non-empty")),
            },
            None => fallback(),
        }
    }
}

/// Places every rule of `rs` on one or more monitors of `topo`.
pub fn partition(rs: &ValidatedRuleSet, topo: &Topology) -> Result<PartitionResult, PartitionError> {
    let strata = stratify(rs.clone())?.predicate_stratum;
    let derived: BTreeSet<&str> = rs.rules.derived_predicates();
    let mut planner = Planner {
        rs,
        topo,
        derived,
        assigned: BTreeMap::new(),
        shared: BTreeSet::new(),
        planned: BTreeSet::new(),
        live: BTreeMap::new(),
    };
    // Validate coverage of every attested base literal up front.
    for r in &rs.rules.rules {
        for lit in &r.body {
            if let Some(c) = lit.claim() {
                if !planner.derived.contains(c.predicate()) {
                    planner.sources(c)?;
                }
            }
        }
    }
    let referenced: BTreeSet<&str> = rs.rules.rules.iter().flat_map(|r| r.body_predicates().map(|(p, _)| p)).collect();
    let mut roots: Vec<&Rule> = rs
        .rules
        .rules
        .iter()
        .filter(|r| !referenced.contains(r.head.predicate()) || r.head.predicate().starts_with("forbidden"))
        .collect();
    loop {
        for rule in roots.drain(..) {
            let m = planner.owner(rule, &strata)?;
            planner.assigned.entry(m.clone()).or_default().insert(rule.id);
            planner.require_rule(&m, rule)?;
        }
        // Rules reachable from no root (cycles among referenced heads).
        let covered: BTreeSet<usize> = planner.assigned.values().flatten().copied().collect();
        roots = rs.rules.rules.iter().filter(|r| !covered.contains(&r.id)).take(1).collect();
        if roots.is_empty() {
            break;
        }
    }
    let assignments = planner
        .assigned
        .iter()
        .map(|(p, ids)| (p.clone(), rs.subset(ids)))
        .collect();
    Ok(PartitionResult {
        assignments,
        shared: planner.shared,
    })
}
