use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::common_log::CommonLog;
use super::proof::Prover;
use super::{
    derived_path, event_fact, MonitorConfig, MonitorError, MonitorOutcome, Mode, RejectReason, Verdict, KIND_DERIVED,
    KIND_REJECTION, KIND_VERDICT, PATH_REJECTION, PATH_VERDICT, SIGNATURE_VIOLATION,
};
use crate::crypto::{sign_event, verify_event, Event, KeyRegistry, SignedEvent, SigningKey};
use crate::engine::{evaluate, rule_instances, AttestedFact, EvalReport, FactKey, FactStore, GroundAtom};
use crate::engine::matching::ground_claim;
use crate::lang::{Atom, Claim, Literal, Term, Value};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorStats {
    pub events_processed: u64,
    pub events_rejected: u64,
    pub rule_firings: u64,
    pub fixpoint_iterations: u64,
    pub signature_verifications: u64,
    pub blocking_ticks: u64,
}

/// Result of observing one event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub outcome: MonitorOutcome,
    pub log_index: u64,
    /// Verdict and rejection events this observation appended.
    pub emitted: Vec<SignedEvent>,
    /// Simulated ticks the receiver waited for the monitor.
    pub blocking_ticks: u64,
}

pub struct Monitor {
    config: MonitorConfig,
    name: String,
    key: SigningKey,
    store: FactStore,
    sessions: BTreeMap<u64, u64>,
    open: BTreeSet<u64>,
    received: BTreeSet<(FactKey, Vec<Value>)>,
    forwarded: BTreeSet<(String, FactKey, Vec<Value>)>,
    clock: u64,
    wall: u64,
    verdicts: Vec<Verdict>,
    stats: MonitorStats,
}

impl Monitor {
    /// `key` must belong to the monitor principal of `config`.
    pub fn new(config: MonitorConfig, key: SigningKey) -> Self {
        let name = config.monitor_principal();
        let mut store = FactStore::new();
        store.set_protected_prefixes(config.violation_prefixes.clone());
        Monitor {
            config,
            name,
            key,
            store,
            sessions: BTreeMap::new(),
            open: BTreeSet::new(),
            received: BTreeSet::new(),
            forwarded: BTreeSet::new(),
            clock: 0,
            wall: 0,
            verdicts: Vec::new(),
            stats: MonitorStats::default(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    pub fn store(&self) -> &FactStore {
        &self.store
    }

    pub fn verdicts(&self) -> &[Verdict] {
        &self.verdicts
    }

    pub fn stats(&self) -> MonitorStats {
        self.stats
    }

    fn tick(&mut self, seen: u64) -> u64 {
        self.clock = self.clock.max(seen) + 1;
        self.clock
    }

    fn session_revision(&mut self, session: u64) -> u64 {
        if let Some(r) = self.sessions.get(&session) {
            return *r;
        }
        let r = self.store.current_revision() + 1;
        self.sessions.insert(session, r);
        self.open.insert(session);
        r
    }

    fn session_of_revision(&self, revision: u64) -> u64 {
        self.sessions
            .iter()
            .find(|(_, r)| **r == revision)
            .map(|(s, _)| *s)
            .unwrap_or(0)
    }

    fn record_eval(&mut self, report: &EvalReport) {
        self.stats.rule_firings += report.rule_firings;
        self.stats.fixpoint_iterations += report.iterations;
    }

    fn violations(&self, report: &EvalReport) -> Vec<AttestedFact> {
        report
            .new_facts
            .iter()
            .filter(|f| self.config.is_violation(&f.atom.predicate))
            .cloned()
            .collect()
    }

    /// Intercepts one component event addressed to the guarded principal.
    pub fn observe(
        &mut self,
        log: &mut CommonLog,
        reg: &KeyRegistry,
        se: &SignedEvent,
    ) -> Result<Observation, MonitorError> {
        if !log.is_online() {
            return Err(MonitorError::LogUnavailable);
        }
        self.stats.events_processed += 1;
        self.tick(se.event.lamport_ts);
        self.wall = self.wall.max(se.event.wall_ts);
        self.stats.signature_verifications += 1;
        let signature_ok = matches!(verify_event(reg, se), Ok(true));
        let revision = self.session_revision(se.event.session_id);

        if !signature_ok {
            let index = log.append(se)?;
            let verdict = Verdict {
                property: SIGNATURE_VIOLATION.to_string(),
                args: vec![Value::Int(se.event.session_id as i64)],
                bindings: BTreeMap::new(),
                responsible: BTreeSet::from([se.event.sender.clone()]),
                evidence: Vec::new(),
                lamport_ts: self.clock,
                session_id: se.event.session_id,
                monitor: self.name.clone(),
            };
            let mut emitted = vec![self.emit_verdict(log, &verdict, &se.event.receiver)?];
            return Ok(match self.config.mode {
                Mode::TrustThenVerify => Observation {
                    outcome: MonitorOutcome::Flag(vec![verdict]),
                    log_index: index,
                    emitted,
                    blocking_ticks: 0,
                },
                Mode::VerifyThenTrust => {
                    let reason = RejectReason::SignatureInvalid;
                    emitted.push(self.reject(log, index, se, &reason)?);
                    self.stats.blocking_ticks += 1;
                    Observation {
                        outcome: MonitorOutcome::Reject(reason),
                        log_index: index,
                        emitted,
                        blocking_ticks: 1,
                    }
                }
            });
        }

        let (principal, atom) = event_fact(se).expect("component events carry a fact");
        match self.config.mode {
            Mode::TrustThenVerify => {
                let index = log.append(se)?;
                self.store
                    .assert_fact(AttestedFact::observed(principal.as_deref(), atom, revision, index))?;
                let report = evaluate(&self.config.rules, &mut self.store)?;
                self.record_eval(&report);
                let mut verdicts = Vec::new();
                let mut emitted = Vec::new();
                for f in self.violations(&report) {
                    let v = self.build_verdict(&self.store, log, &f, Some(se))?;
                    emitted.push(self.emit_verdict(log, &v, &se.event.receiver)?);
                    verdicts.push(v);
                }
                let outcome = if verdicts.is_empty() {
                    MonitorOutcome::Accept
                } else {
                    MonitorOutcome::Flag(verdicts)
                };
                Ok(Observation {
                    outcome,
                    log_index: index,
                    emitted,
                    blocking_ticks: 0,
                })
            }
            Mode::VerifyThenTrust => {
                let mut blocking = 1;
                let mut unjustified = None;
                if let Some(goal) = self.config.justification_goals.get(&se.event.path) {
                    let claim = Claim::plain(Atom::new(goal, vec![Term::int(se.event.session_id as i64)]));
                    let mut prover = Prover::new(&self.config.justification_rules.rules, log, false);
                    let found = prover.prove(&claim)?;
                    blocking += prover.steps;
                    if found.is_none() {
                        unjustified = Some(goal.clone());
                    }
                }
                let mut hypothetical = self.store.clone();
                hypothetical.assert_fact(AttestedFact::observed(principal.as_deref(), atom, revision, log.size()))?;
                let report = evaluate(&self.config.rules, &mut hypothetical)?;
                self.record_eval(&report);
                blocking += report.iterations;
                let violations = self.violations(&report);
                let index = log.append(se)?;
                self.stats.blocking_ticks += blocking;

                if violations.is_empty() && unjustified.is_none() {
                    self.store = hypothetical;
                    return Ok(Observation {
                        outcome: MonitorOutcome::Accept,
                        log_index: index,
                        emitted: Vec::new(),
                        blocking_ticks: blocking,
                    });
                }
                log.mark_rejected(index);
                let mut verdicts = Vec::new();
                let mut emitted = Vec::new();
                for f in &violations {
                    let v = self.build_verdict(&hypothetical, log, f, Some(se))?;
                    emitted.push(self.emit_verdict(log, &v, &se.event.receiver)?);
                    verdicts.push(v);
                }
                let reason = match unjustified {
                    Some(goal) if verdicts.is_empty() => RejectReason::NoJustification(goal),
                    _ => RejectReason::WouldViolate(verdicts),
                };
                emitted.push(self.reject(log, index, se, &reason)?);
                Ok(Observation {
                    outcome: MonitorOutcome::Reject(reason),
                    log_index: index,
                    emitted,
                    blocking_ticks: blocking,
                })
            }
        }
    }

    fn reject(
        &mut self,
        log: &mut CommonLog,
        index: u64,
        se: &SignedEvent,
        reason: &RejectReason,
    ) -> Result<SignedEvent, MonitorError> {
        self.stats.events_rejected += 1;
        log.mark_rejected(index);
        let payload = GroundAtom::new(
            "rejected",
            vec![Value::Int(index as i64), Value::Sym(reason.code().to_string())],
        );
        let receiver = if se.event.sender == self.name {
            se.event.receiver.clone()
        } else {
            se.event.sender.clone()
        };
        self.publish(log, se.event.session_id, KIND_REJECTION, PATH_REJECTION, payload, receiver)
    }

    fn publish(
        &mut self,
        log: &mut CommonLog,
        session_id: u64,
        kind: &str,
        path: &str,
        payload: GroundAtom,
        receiver: String,
    ) -> Result<SignedEvent, MonitorError> {
        let lamport_ts = self.tick(0);
        self.wall += 1;
        let event = Event {
            session_id,
            kind: kind.to_string(),
            path: path.to_string(),
            payload,
            sender: self.name.clone(),
            receiver,
            lamport_ts,
            wall_ts: self.wall,
        };
        let se = sign_event(&self.key, event)?;
        log.append(&se)?;
        Ok(se)
    }

    /// Explains a violation fact: the first rule instance deriving it in
    /// `store`, with proof trees for its positive supporting facts.
    fn build_verdict(
        &self,
        store: &FactStore,
        log: &CommonLog,
        fact: &AttestedFact,
        trigger: Option<&SignedEvent>,
    ) -> Result<Verdict, MonitorError> {
        let mut bindings = BTreeMap::new();
        let mut supports = Vec::new();
        for rule in self.config.rules.rules() {
            if let Some(s) = rule_instances(rule, store, fact.principal.as_deref(), &fact.atom)?.into_iter().next() {
                supports = rule
                    .body
                    .iter()
                    .filter_map(|l| match l {
                        Literal::Pos(c) => ground_claim(c, &s),
                        _ => None,
                    })
                    .collect();
                bindings = s;
                break;
            }
        }
        let mut responsible: BTreeSet<String> = supports.iter().filter_map(|(p, _)| p.clone()).collect();
        let mut evidence = Vec::new();
        let mut prover = Prover::new(&self.config.justification_rules.rules, log, true);
        for (p, atom) in &supports {
            let claim = Claim {
                principal: p.as_ref().map(|p| Term::str(p)),
                atom: atom.to_atom(),
            };
            if let Some(tree) = prover.prove(&claim)? {
                evidence.push(tree);
            }
        }
        if let Some(se) = trigger {
            responsible.insert(se.event.sender.clone());
        }
        Ok(Verdict {
            property: fact.atom.predicate.clone(),
            args: fact.atom.args.clone(),
            bindings,
            responsible,
            evidence,
            lamport_ts: self.clock,
            session_id: trigger
                .map(|se| se.event.session_id)
                .unwrap_or_else(|| self.session_of_revision(fact.revision)),
            monitor: self.name.clone(),
        })
    }

    /// Signs and logs a verdict event and records the verdict fact under a
    /// protected predicate.
    pub fn emit_verdict(
        &mut self,
        log: &mut CommonLog,
        verdict: &Verdict,
        receiver: &str,
    ) -> Result<SignedEvent, MonitorError> {
        let receiver = if receiver == self.name { "*" } else { receiver };
        let se = self.publish(
            log,
            verdict.session_id,
            KIND_VERDICT,
            PATH_VERDICT,
            verdict.atom(),
            receiver.to_string(),
        )?;
        self.store.protect(&verdict.property);
        let revision = self.session_revision(verdict.session_id);
        self.store.assert_fact(AttestedFact {
            principal: None,
            atom: verdict.atom(),
            revision,
            source: None,
            derived: true,
        })?;
        self.verdicts.push(verdict.clone());
        Ok(se)
    }

    /// Accepts a derived fact forwarded by another monitor. The event is
    /// already in the log at `index`. Returns whether the fact was new.
    pub fn receive_shared(&mut self, reg: &KeyRegistry, se: &SignedEvent, index: u64) -> Result<bool, MonitorError> {
        self.stats.signature_verifications += 1;
        self.tick(se.event.lamport_ts);
        self.wall = self.wall.max(se.event.wall_ts);
        if se.event.kind != KIND_DERIVED || !matches!(verify_event(reg, se), Ok(true)) {
            return Ok(false);
        }
        let Some((principal, atom)) = event_fact(se) else {
            return Ok(false);
        };
        let revision = self.session_revision(se.event.session_id);
        let fact = AttestedFact::observed(principal.as_deref(), atom, revision, index);
        self.received.insert((fact.key(), fact.atom.args.clone()));
        Ok(self.store.assert_fact(fact)?)
    }

    /// Re-evaluates after shared facts arrived; reports new violations.
    pub fn settle(&mut self, log: &mut CommonLog) -> Result<Vec<Verdict>, MonitorError> {
        let report = evaluate(&self.config.rules, &mut self.store)?;
        self.record_eval(&report);
        let mut verdicts = Vec::new();
        for f in self.violations(&report) {
            let v = self.build_verdict(&self.store, log, &f, None)?;
            let receiver = if self.config.principal == "*" { "*".to_string() } else { self.config.principal.clone() };
            self.emit_verdict(log, &v, &receiver)?;
            verdicts.push(v);
        }
        Ok(verdicts)
    }

    /// Logs `derived` events for facts other monitors need from this one.
    pub fn drain_shares(&mut self, log: &mut CommonLog) -> Result<Vec<(u64, SignedEvent)>, MonitorError> {
        let mut pending = Vec::new();
        for route in &self.config.shares {
            for f in self.store.facts().filter(|f| f.atom.predicate == route.predicate) {
                let tuple = (f.key(), f.atom.args.clone());
                if self.received.contains(&tuple) {
                    continue;
                }
                let entry = (route.to.clone(), tuple.0, tuple.1);
                if self.forwarded.insert(entry) {
                    pending.push((route.to.clone(), f));
                }
            }
        }
        let mut out = Vec::new();
        for (to, f) in pending {
            let session = self.session_of_revision(f.revision);
            let path = derived_path(f.principal.as_deref());
            let se = self.publish(log, session, KIND_DERIVED, &path, f.atom, to)?;
            out.push((log.size() - 1, se));
        }
        Ok(out)
    }

    /// Ends a session; with compaction enabled, drops facts of revisions no
    /// open session can still need.
    pub fn close_session(&mut self, session: u64) -> usize {
        self.open.remove(&session);
        if !self.config.compact {
            return 0;
        }
        let keep_from = self
            .open
            .iter()
            .filter_map(|s| self.sessions.get(s))
            .min()
            .copied()
            .unwrap_or(self.store.current_revision());
        self.store.compact_revisions(keep_from)
    }
}
