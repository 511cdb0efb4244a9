//! Offline replay of a persisted run directory. Needs only the files, the
//! specification and the key registry.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{verify_event, KeyRegistry, SignedEvent};
use crate::engine::{evaluate, AttestedFact, FactStore, GroundAtom};
use crate::lang::{Strata, Value};
use crate::merkle::{
    cross_audit, leaf_hash, Divergence, read_log, verify_consistency, verify_inclusion, AuditLog, DivergenceKind, LogError,
};
use crate::monitor::{
    event_fact, is_monitor_kind, verify_proof_tree, Verdict, KIND_REJECTION, KIND_VERDICT, SIGNATURE_VIOLATION,
};
use crate::sim::Checkpoint;

const VIOLATION_PREFIX: &str = "forbidden";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    MalformedLog,
    CheckpointMismatch,
    ConsistencyFailure,
    InclusionFailure,
    Divergence,
    MalformedRecord,
    VerdictMismatch,
    EvidenceInvalid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub kind: FindingKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replica: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<u64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub ok: bool,
    pub replicas: usize,
    pub entries: u64,
    pub reference_replica: usize,
    pub recorded_verdicts: Vec<String>,
    pub rederived_verdicts: Vec<String>,
    pub findings: Vec<Finding>,
}

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("{0}: {1}")]
    Format(PathBuf, String),
}

fn read(path: &Path) -> Result<String, AuditError> {
    fs::read_to_string(path).map_err(|e| AuditError::Io(path.to_path_buf(), e))
}

fn finding(kind: FindingKind, replica: Option<usize>, index: Option<u64>, detail: impl Into<String>) -> Finding {
    Finding {
        kind,
        replica,
        index,
        detail: detail.into(),
    }
}

type Key = (String, Vec<Value>);

fn render(keys: &BTreeSet<Key>) -> Vec<String> {
    keys.iter()
        .map(|(p, a)| GroundAtom::new(p, a.clone()).to_string())
        .collect()
}

/// Checks every replica against the recorded checkpoints, compares the
/// replicas, replays the reference replica and re-derives all verdicts.
pub fn audit_run_dir(dir: &Path, spec: &Strata, reg: &KeyRegistry) -> Result<AuditReport, AuditError> {
    let cp_path = dir.join("checkpoints.json");
    let checkpoints: Vec<Checkpoint> =
        serde_json::from_str(&read(&cp_path)?).map_err(|e| AuditError::Format(cp_path.clone(), e.to_string()))?;
    let v_path = dir.join("verdicts.json");
    let recorded: Vec<Verdict> =
        serde_json::from_str(&read(&v_path)?).map_err(|e| AuditError::Format(v_path.clone(), e.to_string()))?;

    let mut findings = Vec::new();
    let mut logs: Vec<Option<AuditLog>> = Vec::new();
    loop {
        let path = dir.join(format!("replica-{}.adtl", logs.len()));
        if !path.exists() {
            break;
        }
        match read_log(&path) {
            Ok(log) => logs.push(Some(log)),
            Err(LogError::Io(e)) => return Err(AuditError::Io(path, std::io::Error::other(e))),
            Err(e) => {
                findings.push(finding(FindingKind::MalformedLog, Some(logs.len()), None, e.to_string()));
                logs.push(None);
            }
        }
    }
    if logs.is_empty() {
        return Err(AuditError::Format(dir.to_path_buf(), "no replica-0.adtl".into()));
    }

    let mut clean = Vec::new();
    for (r, log) in logs.iter().enumerate() {
        if let Some(log) = log {
            let before = findings.len();
            check_replica(r, log, &checkpoints, &mut findings);
            if findings.len() == before {
                clean.push(r);
            }
        }
    }

    let states: Vec<_> = logs
        .iter()
        .map(|l| l.as_ref().map_or_else(|| AuditLog::new().root(), AuditLog::root))
        .collect();
    let mut report = cross_audit(&states).map_err(|e| AuditError::Format(dir.to_path_buf(), e.to_string()))?;
    // A tie between replicas is settled by the checkpoints where possible.
    if !clean.contains(&report.reference) {
        if let Some(&r) = clean.first() {
            report.reference = r;
            report.divergent = (0..states.len())
                .filter(|&i| states[i] != states[r])
                .map(|i| Divergence {
                    replica: i,
                    kind: if states[i].size != states[r].size {
                        DivergenceKind::SizeMismatch
                    } else {
                        DivergenceKind::RootMismatch
                    },
                    state: states[i],
                })
                .collect();
        }
    }
    for d in &report.divergent {
        let what = match d.kind {
            DivergenceKind::RootMismatch => "root differs from the reference replica",
            DivergenceKind::SizeMismatch => "size differs from the reference replica",
        };
        findings.push(finding(FindingKind::Divergence, Some(d.replica), None, what));
    }
    let reference = report.reference;
    let Some(log) = logs[reference].as_ref() else {
        return Ok(finish(logs.len(), 0, reference, BTreeSet::new(), BTreeSet::new(), findings));
    };

    let mut events: Vec<(u64, SignedEvent)> = Vec::new();
    for (i, leaf) in log.leaves().enumerate() {
        match SignedEvent::from_record(leaf) {
            Ok(se) => events.push((i as u64, se)),
            Err(e) => findings.push(finding(
                FindingKind::MalformedRecord,
                Some(reference),
                Some(i as u64),
                e.to_string(),
            )),
        }
    }
    let signed_ok = |se: &SignedEvent| matches!(verify_event(reg, se), Ok(true));
    let from_monitor = |se: &SignedEvent| is_monitor_kind(&se.event.kind) && se.event.sender.starts_with("monitor:");

    let mut rejected = BTreeSet::new();
    let mut logged_verdicts = BTreeSet::new();
    for (_, se) in &events {
        if !from_monitor(se) || !signed_ok(se) {
            continue;
        }
        match se.event.kind.as_str() {
            KIND_REJECTION => {
                if let Some(Value::Int(i)) = se.event.payload.args.first() {
                    rejected.insert(*i as u64);
                }
            }
            KIND_VERDICT => {
                logged_verdicts.insert((se.event.payload.predicate.clone(), se.event.payload.args.clone()));
            }
            _ => {}
        }
    }

    let rederived = replay(spec, reg, &events, &rejected).map_err(|e| AuditError::Format(dir.to_path_buf(), e))?;
    let recorded_keys: BTreeSet<Key> = recorded.iter().map(Verdict::key).collect();
    if rederived != logged_verdicts {
        findings.push(finding(
            FindingKind::VerdictMismatch,
            Some(reference),
            None,
            format!(
                "logged {:?}, re-derived {:?}",
                render(&logged_verdicts),
                render(&rederived)
            ),
        ));
    }
    if recorded_keys != logged_verdicts {
        findings.push(finding(
            FindingKind::VerdictMismatch,
            None,
            None,
            format!(
                "verdicts.json {:?}, logged {:?}",
                render(&recorded_keys),
                render(&logged_verdicts)
            ),
        ));
    }

    for v in &recorded {
        for tree in &v.evidence {
            let outcome = log
                .state_at(tree.tree_size)
                .map_err(|e| e.to_string())
                .and_then(|state| {
                    verify_proof_tree(&spec.program.rules, reg, &state, tree).map_err(|e| e.to_string())
                });
            if let Err(e) = outcome {
                findings.push(finding(
                    FindingKind::EvidenceInvalid,
                    Some(reference),
                    None,
                    format!("{}: {e}", v.atom()),
                ));
            }
        }
    }
    Ok(finish(logs.len(), log.size(), reference, logged_verdicts, rederived, findings))
}

fn finish(
    replicas: usize,
    entries: u64,
    reference: usize,
    recorded: BTreeSet<Key>,
    rederived: BTreeSet<Key>,
    findings: Vec<Finding>,
) -> AuditReport {
    AuditReport {
        ok: findings.is_empty(),
        replicas,
        entries,
        reference_replica: reference,
        recorded_verdicts: render(&recorded),
        rederived_verdicts: render(&rederived),
        findings,
    }
}

fn check_replica(r: usize, log: &AuditLog, checkpoints: &[Checkpoint], findings: &mut Vec<Finding>) {
    let mut prev = None;
    for cp in checkpoints {
        let Some(state) = cp.states.get(r) else {
            findings.push(finding(
                FindingKind::CheckpointMismatch,
                Some(r),
                None,
                format!("checkpoint `{}` has no state for this replica", cp.label),
            ));
            continue;
        };
        match log.state_at(state.size) {
            Ok(s) if s == *state => {}
            Ok(_) => findings.push(finding(
                FindingKind::CheckpointMismatch,
                Some(r),
                None,
                format!("root at size {} differs from checkpoint `{}`", state.size, cp.label),
            )),
            Err(e) => findings.push(finding(FindingKind::CheckpointMismatch, Some(r), None, e.to_string())),
        }
        if let Some(old) = prev.filter(|o: &crate::merkle::TreeState| o.size > 0 && o.size <= state.size) {
            let ok = log
                .consistency_proof(old.size, state.size)
                .is_ok_and(|p| verify_consistency(&old, state, &p));
            if !ok {
                findings.push(finding(
                    FindingKind::ConsistencyFailure,
                    Some(r),
                    None,
                    format!("{} -> {} at checkpoint `{}`", old.size, state.size, cp.label),
                ));
            }
        }
        prev = Some(*state);
    }
    let Some(last) = prev else { return };
    for i in 0..last.size.min(log.size()) {
        let leaf = leaf_hash(log.leaf(i).expect("index below size"));
        let ok = log
            .inclusion_proof_at(i, last.size)
            .is_ok_and(|p| verify_inclusion(&last, &leaf, &p));
        if !ok {
            findings.push(finding(FindingKind::InclusionFailure, Some(r), Some(i), "leaf not included under final checkpoint"));
        }
    }
}

/// Re-derives verdicts with one global engine. Rejected events are
/// evaluated without being committed, as the rejecting monitor did.
fn replay(
    spec: &Strata,
    reg: &KeyRegistry,
    events: &[(u64, SignedEvent)],
    rejected: &BTreeSet<u64>,
) -> Result<BTreeSet<Key>, String> {
    let mut store = FactStore::new();
    store.set_protected_prefixes(vec![VIOLATION_PREFIX.to_string()]);
    let mut out = BTreeSet::new();
    for (index, se) in events {
        if is_monitor_kind(&se.event.kind) {
            continue;
        }
        if !matches!(verify_event(reg, se), Ok(true)) {
            out.insert((
                SIGNATURE_VIOLATION.to_string(),
                vec![Value::Int(se.event.session_id as i64)],
            ));
            continue;
        }
        let Some((principal, atom)) = event_fact(se) else { continue };
        let fact = AttestedFact::observed(principal.as_deref(), atom, 1, *index);
        let mut hypothetical;
        let target = if rejected.contains(index) {
            hypothetical = store.clone();
            &mut hypothetical
        } else {
            &mut store
        };
        target.assert_fact(fact).map_err(|e| e.to_string())?;
        let report = evaluate(spec, target).map_err(|e| e.to_string())?;
        for f in report.new_facts {
            if f.atom.predicate.starts_with(VIOLATION_PREFIX) {
                out.insert((f.atom.predicate, f.atom.args));
            }
        }
    }
    Ok(out)
}
