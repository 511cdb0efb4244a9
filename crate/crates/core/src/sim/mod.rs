//! Deterministic simulation of the UAV booking workflow with fault
//! injection. Components exchange signed events through in-process
//! delivery; each delivery passes through a monitor first.

pub mod bundled;
mod harness;

pub use harness::{Checkpoint, Harness, RunOptions, RunOutput, TraceEntry};

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::CryptoError;
use crate::engine::{EngineError, GroundAtom};
use crate::lang::{parse_ground_atom, LangError};
use crate::merkle::LogError;
use crate::monitor::MonitorError;
use crate::partition::PartitionError;

pub const DEFAULT_PRINCIPALS: [&str; 5] = ["User", "SB", "MRM", "Personnel", "DO"];
pub const DEFAULT_KIND: &str = "postRequest";
pub const PATH_SELECT: &str = "/select_booking";
pub const PATH_BOOKING_REQUEST: &str = "/booking_request";
pub const PATH_RTF: &str = "/ready_to_fly";
pub const PATH_LAUNCH: &str = "/launch";

/// Per-principal logical clock.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LamportClock {
    pub local: u64,
}

impl LamportClock {
    /// Send (no argument) or receive step.
    pub fn next_timestamp(&mut self, received: Option<u64>) -> u64 {
        self.local = self.local.max(received.unwrap_or(0)) + 1;
        self.local
    }

    /// Moves the clock forward without an event, as a stalled component would.
    pub fn skip(&mut self, ticks: u64) {
        self.local += ticks;
    }
}

/// Position of an event in the global order: timestamp, then principal.
pub fn order_key(lamport_ts: u64, principal: &str) -> (u64, &str) {
    (lamport_ts, principal)
}

fn default_kind() -> String {
    DEFAULT_KIND.to_string()
}

fn default_principals() -> Vec<String> {
    DEFAULT_PRINCIPALS.map(String::from).to_vec()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Message {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub session: u64,
    pub from: String,
    pub to: String,
    #[serde(default = "default_kind")]
    pub kind: String,
    pub path: String,
    /// Ground atom in spec syntax.
    pub payload: String,
}

impl Message {
    pub fn payload_atom(&self) -> Result<GroundAtom, ScenarioError> {
        let atom = parse_ground_atom(&self.payload).map_err(|e| ScenarioError::Invalid {
            location: self.id.clone().unwrap_or_default(),
            message: format!("payload: {e}"),
        })?;
        GroundAtom::from_atom(&atom).map_err(|e| ScenarioError::Invalid {
            location: self.id.clone().unwrap_or_default(),
            message: format!("payload: {e}"),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KeySource {
    /// Signed with the claimed sender's own key.
    ValidKey,
    /// Signed with a key the registry does not know.
    InvalidKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum FaultSpec {
    Forge { message: Message, key_source: KeySource },
    Delay { event: String, amount: u64 },
    Drop { event: String },
    TamperLog { replica: usize, leaf: u64, offset: usize, mask: u8 },
    /// The common log stops accepting appends from this point on.
    LogOutage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", deny_unknown_fields)]
pub enum Action {
    SendMessage(Message),
    /// The user picks one of the offered options.
    SelectBooking {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<String>,
        session: u64,
        option: i64,
    },
    InjectFault { fault: FaultSpec },
    CloseSession { session: u64 },
}

impl Action {
    pub fn id(&self) -> Option<&str> {
        match self {
            Action::SendMessage(m) => m.id.as_deref(),
            Action::SelectBooking { id, .. } => id.as_deref(),
            _ => None,
        }
    }

    /// The message this action sends, if any.
    pub fn message(&self) -> Option<Message> {
        match self {
            Action::SendMessage(m) => Some(m.clone()),
            Action::SelectBooking { id, session, option } => Some(Message {
                id: id.clone(),
                session: *session,
                from: "User".into(),
                to: "SB".into(),
                kind: default_kind(),
                path: PATH_SELECT.into(),
                payload: format!("select({option})"),
            }),
            Action::InjectFault {
                fault: FaultSpec::Forge { message, .. },
            } => Some(message.clone()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_principals")]
    pub principals: Vec<String>,
    pub script: Vec<Action>,
    /// Path to maximum Lamport delay since the session's first event.
    #[serde(default)]
    pub deadlines: BTreeMap<String, u64>,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    pub fn sessions(&self) -> BTreeSet<u64> {
        self.script
            .iter()
            .filter_map(|a| a.message().map(|m| m.session))
            .collect()
    }

    pub fn faults(&self) -> impl Iterator<Item = &FaultSpec> {
        self.script.iter().filter_map(|a| match a {
            Action::InjectFault { fault } => Some(fault),
            _ => None,
        })
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let declared: BTreeSet<&str> = self.principals.iter().map(String::as_str).collect();
        let mut ids = BTreeSet::new();
        let mut requested = BTreeSet::new();
        for (i, action) in self.script.iter().enumerate() {
            let loc = || format!("script[{i}]");
            if let Some(id) = action.id() {
                if !ids.insert(id.to_string()) {
                    return Err(ScenarioError::Invalid {
                        location: loc(),
                        message: format!("duplicate event id `{id}`"),
                    });
                }
            }
            if let Some(m) = action.message() {
                for p in [&m.from, &m.to] {
                    if !declared.contains(p.as_str()) {
                        return Err(ScenarioError::UndeclaredPrincipal {
                            location: loc(),
                            name: p.clone(),
                        });
                    }
                }
                m.payload_atom().map_err(|e| match e {
                    ScenarioError::Invalid { message, .. } => ScenarioError::Invalid { location: loc(), message },
                    other => other,
                })?;
                let forged = matches!(action, Action::InjectFault { .. });
                if m.path == PATH_BOOKING_REQUEST && !forged && !requested.insert(m.session) {
                    return Err(ScenarioError::Invalid {
                        location: loc(),
                        message: format!("session {} already has a booking request", m.session),
                    });
                }
            }
            if let Action::InjectFault {
                fault: FaultSpec::Delay { amount: 0, .. },
            } = action
            {
                return Err(ScenarioError::Invalid {
                    location: loc(),
                    message: "delay amount must be positive".into(),
                });
            }
        }
        for fault in self.faults() {
            if let FaultSpec::Delay { event, .. } | FaultSpec::Drop { event } = fault {
                if !ids.contains(event) {
                    return Err(ScenarioError::UnresolvedEventRef(event.clone()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{location}: {message}")]
    Parse { location: String, message: String },
    #[error("{location}: {message}")]
    Invalid { location: String, message: String },
    #[error("{location}: undeclared principal `{name}`")]
    UndeclaredPrincipal { location: String, name: String },
    #[error("fault refers to unknown event `{0}`")]
    UnresolvedEventRef(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub fn parse_scenario(text: &str, origin: &str) -> Result<Scenario, ScenarioError> {
    let sc: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
        location: format!("{origin}:{}:{}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    sc.validate()?;
    Ok(sc)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = fs::read_to_string(path)?;
    parse_scenario(&text, &path.display().to_string())
}

/// Adds `fault` to the scenario. Forged messages and log faults act where
/// they are inserted (the end); delays and drops apply to the referenced
/// event wherever it appears.
pub fn inject_fault(sc: &Scenario, fault: FaultSpec) -> Result<Scenario, ScenarioError> {
    let mut out = sc.clone();
    out.script.push(Action::InjectFault { fault });
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub events_processed: u64,
    pub events_rejected: u64,
    pub rule_firings: u64,
    pub fixpoint_iterations: u64,
    pub hash_computations: u64,
    pub signature_verifications: u64,
    pub bytes_appended: u64,
    /// Ticks each observed component event waited for its monitor.
    pub blocking_ticks: Vec<u64>,
}

impl Metrics {
    pub fn mean_blocking_ticks(&self) -> f64 {
        if self.blocking_ticks.is_empty() {
            0.0
        } else {
            self.blocking_ticks.iter().sum::<u64>() as f64 / self.blocking_ticks.len() as f64
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("scenario halted at script[{step}]: {reason}")]
    ScenarioHalt { step: usize, reason: String },
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Lang(#[from] LangError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("no monitor guards `{0}`")]
    NoMonitor(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// `n` nominal booking flows, each closed after its RTF.
pub fn bench_scenario(n: u64, seed: u64) -> Scenario {
    let mut script = Vec::new();
    for s in 1..=n {
        let msg = |from: &str, to: &str, path: &str, payload: &str| {
            Action::SendMessage(Message {
                id: None,
                session: s,
                from: from.into(),
                to: to.into(),
                kind: default_kind(),
                path: path.into(),
                payload: payload.into(),
            })
        };
        script.extend([
            msg("User", "SB", PATH_BOOKING_REQUEST, "request('A','B')"),
            msg("SB", "MRM", "/resource_request", "resources('A','B')"),
            msg("MRM", "SB", "/booking_options", "options(2)"),
            msg("SB", "User", "/booking_options", "options(2)"),
            Action::SelectBooking {
                id: None,
                session: s,
                option: 1,
            },
            msg("SB", "MRM", "/mission", "mission(1)"),
            msg("MRM", "Personnel", "/mission", "mission(1)"),
            msg("Personnel", "MRM", "/personnel_ready", "ready(1)"),
            msg("MRM", "DO", PATH_RTF, "rtf(1)"),
            Action::CloseSession { session: s },
        ]);
    }
    Scenario {
        principals: default_principals(),
        script,
        deadlines: BTreeMap::from([(PATH_RTF.to_string(), 50)]),
        seed,
    }
}
