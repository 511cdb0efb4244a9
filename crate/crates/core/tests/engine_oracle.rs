mod common;

use std::collections::BTreeSet;

use auditrv::engine::{evaluate, AttestedFact, FactStore};
use auditrv::lang::{compile, parse_spec, RuleSet};
use common::{naive_fixpoint, random_program, OracleFact};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn engine_facts(store: &FactStore) -> BTreeSet<OracleFact> {
    store
        .facts()
        .map(|f| (f.principal, f.atom.predicate, f.atom.args))
        .collect()
}

/// Evaluates the rules of `text` with its facts fed in as observed base
/// facts in the given order.
fn run_with_order(text: &str, order: &[usize]) -> BTreeSet<OracleFact> {
    let rs = parse_spec(text).unwrap();
    let rules_only = RuleSet {
        rules: rs.rules.clone(),
        facts: vec![],
    };
    let strata = compile(&rules_only.to_source()).unwrap();
    let mut store = FactStore::new();
    for (i, &k) in order.iter().enumerate() {
        let mut f = AttestedFact::from_claim(&rs.facts[k], 1, Some(i as u64), false).unwrap();
        f.derived = false;
        store.assert_fact(f).unwrap();
    }
    evaluate(&strata, &mut store).unwrap();
    engine_facts(&store)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn semi_naive_matches_naive_fixpoint(seed in any::<u64>()) {
        let text = random_program(&mut ChaCha8Rng::seed_from_u64(seed));
        let strata = compile(&text).unwrap();
        let mut store = FactStore::new();
        evaluate(&strata, &mut store).unwrap();
        prop_assert_eq!(engine_facts(&store), naive_fixpoint(&text), "program:\n{}", text);
    }

    #[test]
    fn fact_order_does_not_matter(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text = random_program(&mut rng);
        let n = parse_spec(&text).unwrap().facts.len();
        let forward: Vec<usize> = (0..n).collect();
        let mut shuffled = forward.clone();
        shuffled.shuffle(&mut rng);
        prop_assert_eq!(run_with_order(&text, &forward), run_with_order(&text, &shuffled));
    }

    #[test]
    fn negation_free_programs_are_monotone(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text = random_program(&mut rng);
        let rs = parse_spec(&text).unwrap();
        prop_assume!(rs.rules.iter().all(|r| !r.has_negation()));
        let n = rs.facts.len();
        let all: Vec<usize> = (0..n).collect();
        let keep = if n == 0 { 0 } else { rand::Rng::gen_range(&mut rng, 0..n) };
        let small = run_with_order(&text, &all[..keep]);
        let large = run_with_order(&text, &all);
        prop_assert!(small.is_subset(&large));
    }
}

#[test]
fn oracle_agrees_on_listing_style_program() {
    let text = "
        'a' attests e(1,2). 'b' attests e(2,3).
        p(X,Y) :- P attests e(X,Y).
        q(X,Z) :- p(X,Y), p(Y,Z).
        q(X,X) :- p(X,Y), not 'b' attests e(Y,W).
    ";
    let strata = compile(text).unwrap();
    let mut store = FactStore::new();
    evaluate(&strata, &mut store).unwrap();
    let oracle = naive_fixpoint(text);
    assert_eq!(engine_facts(&store), oracle);
    assert!(oracle.contains(&(None, "q".into(), vec![auditrv::lang::Value::Int(1), auditrv::lang::Value::Int(3)])));
    assert!(oracle.contains(&(None, "q".into(), vec![auditrv::lang::Value::Int(2), auditrv::lang::Value::Int(2)])));
}
