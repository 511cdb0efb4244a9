mod common;

use std::collections::BTreeSet;

use auditrv::lang::{compile, stratify};
use auditrv::monitor::Mode;
use auditrv::partition::{partition, Topology};
use auditrv::sim::{bundled, Harness, RunOptions};
use common::random_spec;

fn topology() -> Topology {
    let mut t = Topology::from_json(bundled::TOPOLOGY).unwrap();
    t.justification_goals.clear();
    t
}

#[test]
fn random_specs_partition_cleanly() {
    for seed in 0..25 {
        let text = random_spec(seed);
        let strata = compile(&text).unwrap_or_else(|e| panic!("{e}\n{text}"));
        let result = partition(&strata.program, &topology()).unwrap();
        let mut covered = BTreeSet::new();
        for rs in result.assignments.values() {
            stratify(rs.clone()).unwrap();
            covered.extend(rs.rules.rules.iter().map(|r| r.id));
        }
        let all: BTreeSet<usize> = strata.program.rules.rules.iter().map(|r| r.id).collect();
        assert_eq!(covered, all, "{text}");
    }
}

#[test]
fn random_specs_partition_transparently() {
    let mut failures = Vec::new();
    let mut nonempty = 0;
    for seed in 0..25 {
        let text = random_spec(seed);
        let harness = Harness::new(compile(&text).unwrap(), topology());
        for (name, _) in bundled::SCENARIOS {
            let sc = bundled::scenario(name).unwrap().unwrap();
            for mode in [Mode::TrustThenVerify, Mode::VerifyThenTrust] {
                let global = harness.run(&sc, &RunOptions::new(mode, false)).unwrap();
                let split = harness.run(&sc, &RunOptions::new(mode, true)).unwrap();
                nonempty += usize::from(!global.verdicts.is_empty());
                if global.verdict_keys() != split.verdict_keys() {
                    failures.push(format!(
                        "seed {seed} {name} {mode:?}: global {:?} partitioned {:?}\n{text}",
                        global.verdict_keys(),
                        split.verdict_keys()
                    ));
                }
            }
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
    eprintln!("{nonempty} of 200 runs produced verdicts");
    assert!(nonempty >= 50, "{nonempty}");
}
