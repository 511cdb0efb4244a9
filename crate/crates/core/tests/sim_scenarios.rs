mod common;

use std::collections::BTreeSet;

use auditrv::crypto::{verify_event, Event, KeyRegistry};
use auditrv::lang::Value;
use auditrv::merkle::cross_audit;
use auditrv::monitor::{is_monitor_kind, verify_proof_tree, Mode};
use auditrv::sim::{
    bundled, inject_fault, Action, FaultSpec, KeySource, Message, RunOptions, RunOutput, Scenario, SimError,
};
use auditrv::sim::Harness;
use common::{event_fact_text, join_fixpoint};

type Key = (String, Vec<Value>);

const CONFIGS: [(Mode, bool); 4] = [
    (Mode::TrustThenVerify, false),
    (Mode::TrustThenVerify, true),
    (Mode::VerifyThenTrust, false),
    (Mode::VerifyThenTrust, true),
];

fn scenario(name: &str) -> Scenario {
    bundled::scenario(name).unwrap().unwrap()
}

fn run(sc: &Scenario, mode: Mode, partitioned: bool) -> RunOutput {
    Harness::bundled().unwrap().run(sc, &RunOptions::new(mode, partitioned)).unwrap()
}

fn violations(text: &str) -> BTreeSet<Key> {
    join_fixpoint(text)
        .into_iter()
        .filter(|(_, p, _)| p.starts_with("forbidden"))
        .map(|(_, p, a)| (p, a))
        .collect()
}

/// Expected verdicts and rejected log indices, recomputed from the logged
/// component events with the join oracle.
fn oracle(out: &RunOutput, mode: Mode) -> (BTreeSet<Key>, BTreeSet<u64>) {
    let mut committed = bundled::SPEC.to_string();
    let mut verdicts = BTreeSet::new();
    let mut rejected = BTreeSet::new();
    for (i, se) in out.log.entries().iter().enumerate() {
        let e: &Event = &se.event;
        if is_monitor_kind(&e.kind) {
            continue;
        }
        if !matches!(verify_event(&out.registry, se), Ok(true)) {
            verdicts.insert(("forbidden_signature".to_string(), vec![Value::Int(e.session_id as i64)]));
            if mode == Mode::VerifyThenTrust {
                rejected.insert(i as u64);
            }
            continue;
        }
        let before = violations(&committed);
        let after_text = format!("{committed}{}", event_fact_text(e));
        let new: BTreeSet<Key> = violations(&after_text)
            .difference(&before)
            .filter(|k| !verdicts.contains(*k))
            .cloned()
            .collect();
        let justified = e.path != "/ready_to_fly"
            || join_fixpoint(&committed).contains(&(
                None,
                "justified_rtf".to_string(),
                vec![Value::Int(e.session_id as i64)],
            ));
        verdicts.extend(new.iter().cloned());
        if mode == Mode::VerifyThenTrust && (!new.is_empty() || !justified) {
            rejected.insert(i as u64);
        } else {
            committed = after_text;
        }
    }
    (verdicts, rejected)
}

fn rejected_indices(out: &RunOutput) -> BTreeSet<u64> {
    (0..out.log.size()).filter(|i| out.log.is_rejected(*i)).collect()
}

#[test]
fn verdicts_match_the_oracle_on_every_scenario() {
    for (name, _) in bundled::SCENARIOS {
        let sc = scenario(name);
        for (mode, partitioned) in CONFIGS {
            let out = run(&sc, mode, partitioned);
            let (expected, rejected) = oracle(&out, mode);
            assert_eq!(out.verdict_keys(), expected, "{name} {mode:?} partitioned={partitioned}");
            assert_eq!(rejected_indices(&out), rejected, "{name} {mode:?} partitioned={partitioned}");
        }
    }
}

#[test]
fn forged_rtf_yields_one_forbidden_verdict() {
    let sc = scenario("fault_forged_rtf");
    for (mode, partitioned) in CONFIGS {
        let out = run(&sc, mode, partitioned);
        assert_eq!(out.verdicts.len(), 1);
        let v = &out.verdicts[0];
        assert_eq!(v.key(), ("forbidden".to_string(), vec![Value::Int(7)]));
        assert_eq!(v.responsible, BTreeSet::from(["DO".to_string(), "MRM".to_string()]));
        assert!(!v.evidence.is_empty());
        match mode {
            Mode::VerifyThenTrust => {
                assert!(!out.has_launch());
                assert!(out.trace.iter().any(|t| t.event == "reject" && t.detail.as_deref() == Some("would_violate")));
            }
            Mode::TrustThenVerify => {
                assert!(out.has_launch());
                assert!(out
                    .trace
                    .iter()
                    .any(|t| t.event == "deliver" && t.session == 7 && t.detail.as_deref() == Some("flag")));
            }
        }
    }
}

#[test]
fn delayed_rtf_yields_one_delay_verdict() {
    let sc = scenario("fault_delayed_rtf");
    for (mode, partitioned) in CONFIGS {
        let out = run(&sc, mode, partitioned);
        assert_eq!(out.verdicts.len(), 1);
        let v = &out.verdicts[0];
        assert_eq!(v.key(), ("forbidden_delay".to_string(), vec![Value::Int(1)]));
        let expected: BTreeSet<String> = ["SB", "DO", "MRM"].map(String::from).into();
        assert_eq!(v.responsible, expected);
        assert_eq!(out.has_launch(), mode == Mode::TrustThenVerify);
        assert!(out.trace.iter().any(|t| t.late));
    }
}

#[test]
fn nominal_accepts_everything() {
    let sc = scenario("nominal");
    for (mode, partitioned) in CONFIGS {
        let out = run(&sc, mode, partitioned);
        assert!(out.verdicts.is_empty());
        assert_eq!(out.metrics.events_rejected, 0);
        assert!(out.trace.iter().all(|t| t.event != "reject"));
        assert!(out.has_launch());
        // Request, options, offer, selection, mission, assignment,
        // personnel ready, RTF, launch.
        let delivered: Vec<&str> = out
            .trace
            .iter()
            .filter(|t| t.event == "deliver")
            .map(|t| t.path.as_deref().unwrap())
            .collect();
        assert_eq!(delivered.len(), 10);
        assert_eq!(delivered.first(), Some(&"/booking_request"));
        assert_eq!(&delivered[delivered.len() - 2..], &["/ready_to_fly", "/launch"]);
    }
}

#[test]
fn evidence_verifies_against_the_log() {
    for (name, _) in bundled::SCENARIOS {
        for (mode, partitioned) in CONFIGS {
            let out = run(&scenario(name), mode, partitioned);
            let spec = Harness::bundled().unwrap().spec;
            for v in &out.verdicts {
                for tree in &v.evidence {
                    let state = out.log.replicas()[0].state_at(tree.tree_size).unwrap();
                    verify_proof_tree(&spec.program.rules, &out.registry, &state, tree).unwrap();
                }
            }
        }
    }
}

#[test]
fn runs_are_deterministic() {
    for (name, _) in bundled::SCENARIOS {
        for (mode, partitioned) in CONFIGS {
            let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
            for d in &dirs {
                run(&scenario(name), mode, partitioned).persist(d.path()).unwrap();
            }
            for file in ["replica-0.adtl", "replica-1.adtl", "trace.jsonl", "metrics.json", "verdicts.json"] {
                let a = std::fs::read(dirs[0].path().join(file)).unwrap();
                let b = std::fs::read(dirs[1].path().join(file)).unwrap();
                assert!(a == b, "{name} {file} differs");
            }
        }
    }
}

#[test]
fn seed_changes_keys_and_log() {
    let mut sc = scenario("nominal");
    let a = run(&sc, Mode::TrustThenVerify, false);
    sc.seed += 1;
    let b = run(&sc, Mode::TrustThenVerify, false);
    assert_ne!(a.log.state(), b.log.state());
    assert_eq!(a.verdict_keys(), b.verdict_keys());
}

#[test]
fn receive_follows_send() {
    for (name, _) in bundled::SCENARIOS {
        for (mode, partitioned) in CONFIGS {
            let out = run(&scenario(name), mode, partitioned);
            for d in out.trace.iter().filter(|t| t.event == "deliver") {
                let send = out.trace.iter().find(|t| t.seq + 1 == d.seq).unwrap();
                assert_eq!(send.event, "send");
                assert!(send.lamport_ts < d.lamport_ts, "{send:?} {d:?}");
            }
            let keys: Vec<_> = out.trace.iter().map(|t| (t.lamport_ts, t.principal.clone(), t.seq)).collect();
            assert!(keys.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}

/// The first `k` steps plus every fault whose target is among them. A
/// delay or drop rewrites an earlier delivery, so it travels with it.
fn prefix_with_faults(sc: &Scenario, k: usize) -> Scenario {
    let kept: BTreeSet<&str> = sc.script[..k].iter().filter_map(|a| a.id()).collect();
    let mut out = sc.clone();
    out.script = sc
        .script
        .iter()
        .enumerate()
        .filter(|(i, a)| match a {
            Action::InjectFault {
                fault: FaultSpec::Delay { event, .. } | FaultSpec::Drop { event },
            } => kept.contains(event.as_str()),
            _ => *i < k,
        })
        .map(|(_, a)| a.clone())
        .collect();
    out
}

#[test]
fn metrics_are_sane_and_monotonic() {
    for (name, _) in bundled::SCENARIOS {
        let sc = scenario(name);
        for (mode, partitioned) in CONFIGS {
            let mut last: Option<auditrv::sim::Metrics> = None;
            for k in 0..=sc.script.len() {
                let prefix = prefix_with_faults(&sc, k);
                let m = run(&prefix, mode, partitioned).metrics;
                assert!(m.events_rejected <= m.events_processed);
                if mode == Mode::TrustThenVerify {
                    assert!(m.blocking_ticks.iter().all(|b| *b == 0));
                }
                if let Some(l) = &last {
                    assert!(m.events_processed >= l.events_processed, "{name} {mode:?} {partitioned} k={k} {} < {}", m.events_processed, l.events_processed);
                    assert!(m.events_rejected >= l.events_rejected);
                    assert!(m.rule_firings >= l.rule_firings);
                    assert!(m.fixpoint_iterations >= l.fixpoint_iterations);
                    assert!(m.hash_computations >= l.hash_computations);
                    assert!(m.signature_verifications >= l.signature_verifications);
                    assert!(m.bytes_appended >= l.bytes_appended);
                    assert!(m.blocking_ticks.starts_with(&l.blocking_ticks));
                }
                last = Some(m);
            }
        }
    }
}

#[test]
fn dropped_selection_leaves_rtf_unjustified() {
    let sc = inject_fault(&scenario("nominal"), FaultSpec::Drop { event: "select1".into() }).unwrap();
    let out = run(&sc, Mode::VerifyThenTrust, false);
    let reject = out.trace.iter().find(|t| t.event == "reject").unwrap();
    assert_eq!(reject.path.as_deref(), Some("/ready_to_fly"));
    assert_eq!(reject.detail.as_deref(), Some("no_justification"));
    assert!(out.verdicts.is_empty());
    assert!(!out.has_launch());
    let ttv = run(&sc, Mode::TrustThenVerify, false);
    assert!(ttv.has_launch());
}

fn forged_rtf(key_source: KeySource) -> FaultSpec {
    FaultSpec::Forge {
        message: Message {
            id: None,
            session: 1,
            from: "MRM".into(),
            to: "DO".into(),
            kind: "postRequest".into(),
            path: "/ready_to_fly".into(),
            payload: "rtf(1)".into(),
        },
        key_source,
    }
}

#[test]
fn invalid_key_forgery_is_caught_by_signature() {
    let mut sc = scenario("nominal");
    sc.script.pop();
    sc.script.retain(|a| a.id() != Some("rtf1"));
    let sc = inject_fault(&sc, forged_rtf(KeySource::InvalidKey)).unwrap();
    for (mode, partitioned) in CONFIGS {
        let out = run(&sc, mode, partitioned);
        let keys = out.verdict_keys();
        assert!(keys.contains(&("forbidden_signature".to_string(), vec![Value::Int(1)])));
        let forged = out.trace.iter().find(|t| t.detail.as_deref() == Some("forged")).unwrap();
        let after = out.trace.iter().find(|t| t.seq == forged.seq + 1).unwrap();
        match mode {
            Mode::VerifyThenTrust => {
                assert_eq!(after.event, "reject");
                assert_eq!(after.detail.as_deref(), Some("signature_invalid"));
                assert!(!out.has_launch());
            }
            Mode::TrustThenVerify => assert_eq!(after.detail.as_deref(), Some("flag")),
        }
    }
}

#[test]
fn tampered_replica_is_named() {
    let out = run(&scenario("fault_tampered_log"), Mode::TrustThenVerify, false);
    let states: Vec<_> = out.log.replicas().iter().map(|r| r.root()).collect();
    let report = cross_audit(&states).unwrap();
    assert_eq!(report.divergent.len(), 1);
    assert_eq!(report.divergent[0].replica, 1);
    let last = out.checkpoints.last().unwrap();
    assert_ne!(last.states[0], last.states[1]);
}

#[test]
fn log_outage_halts_the_scenario() {
    let mut sc = scenario("nominal");
    sc.script.insert(3, Action::InjectFault { fault: FaultSpec::LogOutage });
    for (mode, partitioned) in CONFIGS {
        let err = Harness::bundled()
            .unwrap()
            .run(&sc, &RunOptions::new(mode, partitioned))
            .unwrap_err();
        assert!(matches!(err, SimError::ScenarioHalt { step: 4, .. }), "{err}");
    }
}

#[test]
fn compaction_does_not_change_verdicts() {
    for (name, _) in bundled::SCENARIOS {
        for (mode, partitioned) in CONFIGS {
            let sc = scenario(name);
            let h = Harness::bundled().unwrap();
            let mut opts = RunOptions::new(mode, partitioned);
            let compacted = h.run(&sc, &opts).unwrap();
            opts.compact = false;
            let full = h.run(&sc, &opts).unwrap();
            assert_eq!(compacted.verdict_keys(), full.verdict_keys());
            assert_eq!(compacted.violation_facts, full.violation_facts);
        }
    }
}

#[test]
fn partitioning_is_transparent_on_the_corpus() {
    for (name, _) in bundled::SCENARIOS {
        for mode in [Mode::TrustThenVerify, Mode::VerifyThenTrust] {
            let global = run(&scenario(name), mode, false);
            let split = run(&scenario(name), mode, true);
            assert_eq!(global.verdict_keys(), split.verdict_keys(), "{name} {mode:?}");
            assert_eq!(global.violation_facts, split.violation_facts, "{name} {mode:?}");
        }
    }
}

#[test]
fn modes_agree_on_single_event_violations() {
    for (name, _) in bundled::SCENARIOS {
        let sc = scenario(name);
        for partitioned in [false, true] {
            let ttv = run(&sc, Mode::TrustThenVerify, partitioned);
            let vtt = run(&sc, Mode::VerifyThenTrust, partitioned);
            assert_eq!(ttv.verdict_keys(), vtt.verdict_keys(), "{name}");
        }
    }
}

#[test]
fn unregistered_signers_never_verify() {
    let reg = KeyRegistry::new();
    let out = run(&scenario("nominal"), Mode::TrustThenVerify, false);
    for se in out.log.entries() {
        assert!(verify_event(&reg, se).is_err());
    }
}
