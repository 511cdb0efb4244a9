//! Per-component monitors: log every event, evaluate a rule subset, search
//! for justifications and report verdicts.
//!
//! A component event becomes the fact
//! `receiver attests kind(path, session, lamport_ts, payload)` where
//! `payload` is the printed payload atom. Monitors exchange derived facts
//! as `derived` events on `/derived/<attester>` and publish verdicts as
//! `verdict` events on `/verdict`.

mod common_log;
mod config;
mod monitor;
mod proof;

pub use common_log::CommonLog;
pub use config::{load_monitor_config, MonitorConfigFile};
pub use monitor::{Monitor, MonitorStats, Observation};
pub use proof::{verify_proof_tree, ProofError, ProofNode, ProofTree, Prover};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{CryptoError, SignedEvent};
use crate::engine::{EngineError, GroundAtom, Substitution};
use crate::lang::{LangError, Strata, ValidatedRuleSet, Value};
use crate::merkle::LogError;

pub const KIND_DERIVED: &str = "derived";
pub const KIND_VERDICT: &str = "verdict";
pub const KIND_REJECTION: &str = "rejection";
pub const PATH_VERDICT: &str = "/verdict";
pub const PATH_REJECTION: &str = "/rejection";
pub const SIGNATURE_VIOLATION: &str = "forbidden_signature";

/// Events a monitor writes itself rather than observing from components.
pub fn is_monitor_kind(kind: &str) -> bool {
    matches!(kind, KIND_DERIVED | KIND_VERDICT | KIND_REJECTION)
}

pub fn monitor_name(principal: &str) -> String {
    format!("monitor:{principal}")
}

/// The fact an event contributes to the monitored state, if any.
pub fn event_fact(se: &SignedEvent) -> Option<(Option<String>, GroundAtom)> {
    let e = &se.event;
    match e.kind.as_str() {
        KIND_DERIVED => {
            let attester = e.path.strip_prefix("/derived/").map(str::to_string);
            Some((attester, e.payload.clone()))
        }
        KIND_VERDICT | KIND_REJECTION => None,
        _ => Some((
            Some(e.receiver.clone()),
            GroundAtom::new(
                &e.kind,
                vec![
                    Value::Str(e.path.clone()),
                    Value::Int(e.session_id as i64),
                    Value::Int(e.lamport_ts as i64),
                    Value::Str(e.payload.to_string()),
                ],
            ),
        )),
    }
}

pub fn derived_path(attester: Option<&str>) -> String {
    match attester {
        Some(p) => format!("/derived/{p}"),
        None => "/derived".to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(alias = "ttv")]
    TrustThenVerify,
    #[serde(alias = "vtt")]
    VerifyThenTrust,
}

impl Mode {
    pub fn short(self) -> &'static str {
        match self {
            Mode::TrustThenVerify => "ttv",
            Mode::VerifyThenTrust => "vtt",
        }
    }
}

/// Route for facts of `predicate` produced here and needed at `to`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ShareRoute {
    pub predicate: String,
    pub to: String,
}

#[derive(Debug, Clone)]
pub struct MonitorConfig {
    /// Component this monitor guards; `*` for a single global monitor.
    pub principal: String,
    pub mode: Mode,
    pub rules: Strata,
    /// Full program used for proof search; justification rules are drawn
    /// from it.
    pub justification_rules: ValidatedRuleSet,
    /// Event path to unary goal predicate, instantiated with the session id.
    pub justification_goals: BTreeMap<String, String>,
    pub violation_prefixes: Vec<String>,
    pub shares: Vec<ShareRoute>,
    /// Compact the store when a session closes.
    pub compact: bool,
}

impl MonitorConfig {
    pub fn new(principal: &str, mode: Mode, rules: Strata) -> Self {
        MonitorConfig {
            principal: principal.to_string(),
            mode,
            justification_rules: rules.program.clone(),
            rules,
            justification_goals: BTreeMap::new(),
            violation_prefixes: vec!["forbidden".to_string()],
            shares: Vec::new(),
            compact: true,
        }
    }

    pub fn monitor_principal(&self) -> String {
        if self.principal == "*" {
            monitor_name("global")
        } else {
            monitor_name(&self.principal)
        }
    }

    pub fn is_violation(&self, predicate: &str) -> bool {
        self.violation_prefixes.iter().any(|p| predicate.starts_with(p.as_str()))
    }

    /// Rejects justification goals whose defining rules use negation.
    pub fn check(&self) -> Result<(), MonitorError> {
        for goal in self.justification_goals.values() {
            let closure = crate::partition::dependency_closure(&self.justification_rules.rules, goal)
                .map_err(|e| MonitorError::Config(e.to_string()))?;
            if let Some(r) = closure.rules.iter().find(|r| r.has_negation()) {
                return Err(MonitorError::Config(format!(
                    "justification rule {} for `{goal}` uses negation",
                    r.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub property: String,
    pub args: Vec<Value>,
    pub bindings: Substitution,
    pub responsible: BTreeSet<String>,
    pub evidence: Vec<ProofTree>,
    pub lamport_ts: u64,
    pub session_id: u64,
    pub monitor: String,
}

impl Verdict {
    pub fn atom(&self) -> GroundAtom {
        GroundAtom {
            predicate: self.property.clone(),
            args: self.args.clone(),
        }
    }

    /// Identity used when comparing verdict sets across runs.
    pub fn key(&self) -> (String, Vec<Value>) {
        (self.property.clone(), self.args.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    SignatureInvalid,
    NoJustification(String),
    WouldViolate(Vec<Verdict>),
}

impl RejectReason {
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::SignatureInvalid => "signature_invalid",
            RejectReason::NoJustification(_) => "no_justification",
            RejectReason::WouldViolate(_) => "would_violate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MonitorOutcome {
    Accept,
    Reject(RejectReason),
    Flag(Vec<Verdict>),
}

impl MonitorOutcome {
    /// Whether the receiving component may act on the event.
    pub fn delivers(&self) -> bool {
        !matches!(self, MonitorOutcome::Reject(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MonitorError {
    #[error("common log unavailable")]
    LogUnavailable,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Lang(#[from] LangError),
    #[error("monitor config: {0}")]
    Config(String),
}
