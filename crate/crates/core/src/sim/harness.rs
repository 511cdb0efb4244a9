use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    bundled, Action, FaultSpec, KeySource, LamportClock, Message, Metrics, Scenario, SimError, PATH_LAUNCH, PATH_RTF,
};
use crate::crypto::{derive_seed, generate_principal, sign_event, Event, KeyRegistry, SigningKey};
use crate::lang::{compile, stratify, Strata, Value};
use crate::merkle::{write_log, TreeState};
use crate::monitor::{
    monitor_name, CommonLog, Mode, Monitor, MonitorConfig, MonitorError, MonitorOutcome, ShareRoute, Verdict,
};
use crate::partition::{partition, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub mode: Mode,
    /// One monitor per component, rules split by the partitioner;
    /// otherwise a single global monitor sees every event.
    pub partitioned: bool,
    pub compact: bool,
    pub replicas: usize,
}

impl RunOptions {
    pub fn new(mode: Mode, partitioned: bool) -> Self {
        RunOptions {
            mode,
            partitioned,
            compact: true,
            replicas: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub lamport_ts: u64,
    pub principal: String,
    pub seq: u64,
    /// send, deliver, reject, drop, verdict, close, tamper or outage.
    pub event: String,
    pub session: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    /// Sent later than the scenario deadline for its path allows.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub late: bool,
}

/// Log states of all replicas at one point of the run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub label: String,
    pub states: Vec<TreeState>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<TraceEntry>,
    pub verdicts: Vec<Verdict>,
    pub metrics: Metrics,
    pub log: CommonLog,
    pub registry: KeyRegistry,
    pub checkpoints: Vec<Checkpoint>,
    /// Violation facts held by any monitor at the end of the run.
    pub violation_facts: BTreeSet<(String, Vec<Value>)>,
    /// Fact store dump per monitor.
    pub dumps: BTreeMap<String, String>,
}

impl RunOutput {
    pub fn verdict_keys(&self) -> BTreeSet<(String, Vec<Value>)> {
        self.verdicts.iter().map(Verdict::key).collect()
    }

    pub fn has_launch(&self) -> bool {
        self.trace.iter().any(|t| t.path.as_deref() == Some(PATH_LAUNCH))
    }

    /// Writes the run directory read back by the audit command.
    pub fn persist(&self, dir: &Path) -> Result<(), SimError> {
        fs::create_dir_all(dir.join("facts"))?;
        for (i, r) in self.log.replicas().iter().enumerate() {
            write_log(r, &dir.join(format!("replica-{i}.adtl")))?;
        }
        let json = |v: &dyn erased::Json| v.pretty();
        fs::write(dir.join("checkpoints.json"), json(&self.checkpoints))?;
        fs::write(dir.join("verdicts.json"), json(&self.verdicts))?;
        fs::write(dir.join("metrics.json"), json(&self.metrics))?;
        fs::write(dir.join("registry.txt"), self.registry.to_text())?;
        let mut trace = String::new();
        for t in &self.trace {
            trace.push_str(&serde_json::to_string(t).expect("trace serializes"));
            trace.push('\n');
        }
        fs::write(dir.join("trace.jsonl"), trace)?;
        for (name, dump) in &self.dumps {
            fs::write(dir.join("facts").join(format!("{}.txt", name.replace(':', "-"))), dump)?;
        }
        Ok(())
    }
}

mod erased {
    pub trait Json {
        fn pretty(&self) -> String;
    }

    impl<T: serde::Serialize> Json for T {
        fn pretty(&self) -> String {
            let mut s = serde_json::to_string_pretty(self).expect("value serializes");
            s.push('\n');
            s
        }
    }
}

/// Program and topology a run is configured with.
#[derive(Debug, Clone)]
pub struct Harness {
    pub spec: Strata,
    pub topology: Topology,
}

impl Harness {
    pub fn new(spec: Strata, topology: Topology) -> Self {
        Harness { spec, topology }
    }

    pub fn bundled() -> Result<Self, SimError> {
        Ok(Harness {
            spec: compile(bundled::SPEC)?,
            topology: Topology::from_json(bundled::TOPOLOGY)?,
        })
    }

    pub fn run(&self, sc: &Scenario, opts: &RunOptions) -> Result<RunOutput, SimError> {
        sc.validate()?;
        let mut run = Run::new(self, sc, opts)?;
        for (step, action) in sc.script.iter().enumerate() {
            run.step(step, action)?;
        }
        run.finish()
    }
}

struct Run<'a> {
    sc: &'a Scenario,
    opts: &'a RunOptions,
    reg: KeyRegistry,
    keys: BTreeMap<String, SigningKey>,
    clocks: BTreeMap<String, LamportClock>,
    monitors: BTreeMap<String, Monitor>,
    seen: BTreeMap<String, usize>,
    log: CommonLog,
    trace: Vec<TraceEntry>,
    verdicts: Vec<Verdict>,
    blocking: Vec<u64>,
    checkpoints: Vec<Checkpoint>,
    delays: BTreeMap<String, u64>,
    drops: BTreeSet<String>,
    session_start: BTreeMap<u64, u64>,
    rng: ChaCha8Rng,
    wall: u64,
}

fn halt(step: usize) -> impl Fn(MonitorError) -> SimError {
    move |e| match e {
        MonitorError::LogUnavailable => SimError::ScenarioHalt {
            step,
            reason: "monitor cannot reach the common log".into(),
        },
        other => SimError::Monitor(other),
    }
}

impl<'a> Run<'a> {
    fn new(h: &'a Harness, sc: &'a Scenario, opts: &'a RunOptions) -> Result<Self, SimError> {
        let mut reg = KeyRegistry::new();
        let mut keys = BTreeMap::new();
        for p in &sc.principals {
            let (_, key) = generate_principal(&mut reg, p, &derive_seed(sc.seed, p))?;
            keys.insert(p.clone(), key);
        }
        let mut monitor_names = vec![monitor_name("global")];
        monitor_names.extend(h.topology.principals.iter().map(|p| monitor_name(p)));
        let mut monitor_keys = BTreeMap::new();
        for name in monitor_names {
            if !reg.contains(&name) {
                let (_, key) = generate_principal(&mut reg, &name, &derive_seed(sc.seed, &name))?;
                monitor_keys.insert(name, key);
            }
        }

        let goals = h.topology.justification_goals.clone();
        let mut configs = Vec::new();
        if opts.partitioned {
            let plan = partition(&h.spec.program, &h.topology)?;
            for p in &h.topology.principals {
                let ids: BTreeSet<usize> = plan
                    .assignments
                    .get(p)
                    .map(|rs| rs.rules.rules.iter().map(|r| r.id).collect())
                    .unwrap_or_default();
                let mut cfg = MonitorConfig::new(p, opts.mode, stratify(h.spec.program.subset(&ids))?);
                cfg.justification_rules = h.spec.program.clone();
                cfg.shares = plan
                    .shared
                    .iter()
                    .filter(|s| &s.from == p)
                    .map(|s| ShareRoute {
                        predicate: s.predicate.clone(),
                        to: s.to.clone(),
                    })
                    .collect();
                configs.push(cfg);
            }
        } else {
            configs.push(MonitorConfig::new("*", opts.mode, h.spec.clone()));
        }
        let mut monitors = BTreeMap::new();
        for mut cfg in configs {
            cfg.justification_goals = goals.clone();
            cfg.compact = opts.compact;
            cfg.check()?;
            let key = monitor_keys
                .remove(&cfg.monitor_principal())
                .ok_or_else(|| SimError::NoMonitor(cfg.principal.clone()))?;
            monitors.insert(cfg.principal.clone(), Monitor::new(cfg, key));
        }

        let mut delays = BTreeMap::new();
        let mut drops = BTreeSet::new();
        for f in sc.faults() {
            match f {
                FaultSpec::Delay { event, amount } => {
                    *delays.entry(event.clone()).or_insert(0) += amount;
                }
                FaultSpec::Drop { event } => {
                    drops.insert(event.clone());
                }
                _ => {}
            }
        }
        Ok(Run {
            sc,
            opts,
            reg,
            keys,
            clocks: BTreeMap::new(),
            seen: monitors.keys().map(|k| (k.clone(), 0)).collect(),
            monitors,
            log: CommonLog::new(opts.replicas),
            trace: Vec::new(),
            verdicts: Vec::new(),
            blocking: Vec::new(),
            checkpoints: Vec::new(),
            delays,
            drops,
            session_start: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(sc.seed),
            wall: 0,
        })
    }

    fn note(&mut self, lamport_ts: u64, principal: &str, event: &str, session: u64) -> &mut TraceEntry {
        self.trace.push(TraceEntry {
            lamport_ts,
            principal: principal.to_string(),
            seq: self.trace.len() as u64,
            event: event.to_string(),
            session,
            path: None,
            peer: None,
            detail: None,
            late: false,
        });
        self.trace.last_mut().expect("just pushed")
    }

    fn step(&mut self, step: usize, action: &Action) -> Result<(), SimError> {
        match action {
            Action::SendMessage(_) | Action::SelectBooking { .. } => {
                let msg = action.message().expect("sending action");
                self.send(step, &msg, None)?;
            }
            Action::InjectFault { fault } => match fault {
                FaultSpec::Forge { message, key_source } => self.send(step, message, Some(*key_source))?,
                FaultSpec::TamperLog {
                    replica,
                    leaf,
                    offset,
                    mask,
                } => {
                    self.log.tamper(*replica, *leaf, *offset, *mask)?;
                    let e = self.note(0, "*", "tamper", 0);
                    e.detail = Some(format!("replica {replica} leaf {leaf}"));
                }
                FaultSpec::LogOutage => {
                    self.log.set_online(false);
                    self.note(0, "*", "outage", 0);
                }
                FaultSpec::Delay { .. } | FaultSpec::Drop { .. } => {}
            },
            Action::CloseSession { session } => {
                for m in self.monitors.values_mut() {
                    m.close_session(*session);
                }
                self.checkpoint(format!("session {session} closed"));
                let ts = self.clocks.values().map(|c| c.local).max().unwrap_or(0);
                self.note(ts, "*", "close", *session);
            }
        }
        self.collect_verdicts();
        Ok(())
    }

    fn checkpoint(&mut self, label: String) {
        let states = self.log.replicas().iter().map(|r| r.root()).collect();
        self.checkpoints.push(Checkpoint { label, states });
    }

    fn send(&mut self, step: usize, msg: &Message, forged: Option<KeySource>) -> Result<(), SimError> {
        if msg.id.as_ref().is_some_and(|id| self.drops.contains(id)) {
            let e = self.note(0, &msg.from, "drop", msg.session);
            e.path = Some(msg.path.clone());
            e.peer = Some(msg.to.clone());
            return Ok(());
        }
        let clock = self.clocks.entry(msg.from.clone()).or_default();
        if let Some(amount) = msg.id.as_ref().and_then(|id| self.delays.get(id)) {
            clock.skip(*amount);
        }
        let ts = clock.next_timestamp(None);
        self.wall += 1;
        let event = Event {
            session_id: msg.session,
            kind: msg.kind.clone(),
            path: msg.path.clone(),
            payload: msg.payload_atom()?,
            sender: msg.from.clone(),
            receiver: msg.to.clone(),
            lamport_ts: ts,
            wall_ts: self.wall,
        };
        let se = match forged {
            Some(KeySource::InvalidKey) => {
                let mut seed = [0u8; 32];
                self.rng.fill_bytes(&mut seed);
                let (_, rogue) = generate_principal(&mut KeyRegistry::new(), &msg.from, &seed)?;
                sign_event(&rogue, event)?
            }
            _ => sign_event(&self.keys[&msg.from], event)?,
        };
        let start = *self.session_start.entry(msg.session).or_insert(ts);
        let late = self.sc.deadlines.get(&msg.path).is_some_and(|d| ts - start > *d);
        let e = self.note(ts, &msg.from, "send", msg.session);
        e.path = Some(msg.path.clone());
        e.peer = Some(msg.to.clone());
        e.late = late;
        if forged.is_some() {
            e.detail = Some("forged".into());
        }

        let key = if self.opts.partitioned { msg.to.as_str() } else { "*" };
        let monitor = self
            .monitors
            .get_mut(key)
            .ok_or_else(|| SimError::NoMonitor(msg.to.clone()))?;
        let monitor_name = monitor.name().to_string();
        let obs = monitor.observe(&mut self.log, &self.reg, &se).map_err(halt(step))?;
        self.blocking.push(obs.blocking_ticks);
        let delivered = obs.outcome.delivers();
        match &obs.outcome {
            MonitorOutcome::Reject(reason) => {
                let e = self.note(ts, &monitor_name, "reject", msg.session);
                e.path = Some(msg.path.clone());
                e.peer = Some(msg.from.clone());
                e.detail = Some(reason.code().to_string());
            }
            outcome => {
                let rts = self.clocks.entry(msg.to.clone()).or_default().next_timestamp(Some(ts));
                let e = self.note(rts, &msg.to, "deliver", msg.session);
                e.path = Some(msg.path.clone());
                e.peer = Some(msg.from.clone());
                e.detail = Some(if matches!(outcome, MonitorOutcome::Flag(_)) { "flag" } else { "accept" }.to_string());
            }
        }
        self.propagate(step)?;
        self.collect_verdicts();
        if delivered && msg.path == PATH_RTF && msg.to == "DO" {
            let launch = Message {
                id: None,
                session: msg.session,
                from: "DO".into(),
                to: msg.from.clone(),
                kind: msg.kind.clone(),
                path: PATH_LAUNCH.into(),
                payload: format!("launch({})", msg.session),
            };
            if self.keys.contains_key(&launch.to) {
                self.send(step, &launch, None)?;
            }
        }
        Ok(())
    }

    /// Forwards shared facts between monitors until none are pending.
    fn propagate(&mut self, step: usize) -> Result<(), SimError> {
        loop {
            let mut touched = BTreeSet::new();
            let names: Vec<String> = self.monitors.keys().cloned().collect();
            for name in names {
                let out = self
                    .monitors
                    .get_mut(&name)
                    .expect("listed")
                    .drain_shares(&mut self.log)
                    .map_err(halt(step))?;
                for (index, se) in out {
                    let to = se.event.receiver.clone();
                    let target = self.monitors.get_mut(&to).ok_or_else(|| SimError::NoMonitor(to.clone()))?;
                    target.receive_shared(&self.reg, &se, index)?;
                    touched.insert(to);
                }
            }
            if touched.is_empty() {
                return Ok(());
            }
            for name in touched {
                self.monitors
                    .get_mut(&name)
                    .expect("listed")
                    .settle(&mut self.log)
                    .map_err(halt(step))?;
            }
        }
    }

    fn collect_verdicts(&mut self) {
        let mut fresh = Vec::new();
        for (name, m) in &self.monitors {
            let seen = self.seen.get_mut(name).expect("tracked");
            fresh.extend(m.verdicts()[*seen..].iter().cloned());
            *seen = m.verdicts().len();
        }
        for v in fresh {
            let e = self.note(v.lamport_ts, &v.monitor, "verdict", v.session_id);
            e.detail = Some(v.atom().to_string());
            self.verdicts.push(v);
        }
    }

    fn finish(mut self) -> Result<RunOutput, SimError> {
        self.checkpoint("end".into());
        let mut metrics = Metrics {
            hash_computations: self.log.hash_count(),
            bytes_appended: self.log.bytes_appended(),
            blocking_ticks: self.blocking,
            ..Metrics::default()
        };
        let mut violation_facts = BTreeSet::new();
        let mut dumps = BTreeMap::new();
        for m in self.monitors.values() {
            let s = m.stats();
            metrics.events_processed += s.events_processed;
            metrics.events_rejected += s.events_rejected;
            metrics.rule_firings += s.rule_firings;
            metrics.fixpoint_iterations += s.fixpoint_iterations;
            metrics.signature_verifications += s.signature_verifications;
            for f in m.store().facts() {
                if m.config().is_violation(&f.atom.predicate) {
                    violation_facts.insert((f.atom.predicate.clone(), f.atom.args.clone()));
                }
            }
            dumps.insert(m.name().to_string(), m.store().dump());
        }
        let mut trace = self.trace;
        trace.sort_by(|a, b| (a.lamport_ts, &a.principal, a.seq).cmp(&(b.lamport_ts, &b.principal, b.seq)));
        Ok(RunOutput {
            trace,
            verdicts: self.verdicts,
            metrics,
            log: self.log,
            registry: self.reg,
            checkpoints: self.checkpoints,
            violation_facts,
            dumps,
        })
    }
}
