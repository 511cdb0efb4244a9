//! Stratified semi-naive bottom-up evaluation.

use std::collections::{BTreeMap, BTreeSet};

use super::matching::{compare, ground_claim, match_args, match_principal, resolved_principal, Substitution};
use super::store::{AttestedFact, FactKey, FactStore, GroundAtom};
use super::EngineError;
use crate::lang::{Claim, Literal, Rule, Strata, Value};

/// Revision-free view of the facts: relation key to tuples.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Db {
    relations: BTreeMap<FactKey, BTreeSet<Vec<Value>>>,
}

impl Db {
    fn from_store(store: &FactStore) -> Self {
        let mut db = Db::default();
        for (key, tuples) in store.relations() {
            db.relations.entry(key.clone()).or_default().extend(tuples.cloned());
        }
        db
    }

    fn insert(&mut self, key: FactKey, args: Vec<Value>) -> bool {
        self.relations.entry(key).or_default().insert(args)
    }

    fn contains(&self, key: &FactKey, args: &[Value]) -> bool {
        self.relations.get(key).is_some_and(|t| t.contains(args))
    }

    fn is_empty(&self) -> bool {
        self.relations.values().all(BTreeSet::is_empty)
    }

    /// Relations a claim can draw from under `subst`.
    fn candidates<'a>(&'a self, claim: &'a Claim, subst: &Substitution) -> Vec<(&'a FactKey, &'a BTreeSet<Vec<Value>>)> {
        let pred = claim.predicate();
        match resolved_principal(claim, subst) {
            Some(principal) => {
                let key = (pred.to_string(), principal);
                self.relations.get_key_value(&key).into_iter().collect()
            }
            None => self
                .relations
                .range((pred.to_string(), Some(String::new()))..)
                .take_while(|((p, _), _)| p == pred)
                .collect(),
        }
    }

    /// All extensions of `subst` under which `claim` holds.
    fn matches(&self, claim: &Claim, subst: &Substitution) -> Vec<Substitution> {
        let mut out = Vec::new();
        for ((_, principal), tuples) in self.candidates(claim, subst) {
            for args in tuples {
                let mut s = subst.clone();
                if match_principal(claim.principal.as_ref(), principal.as_deref(), &mut s)
                    && match_args(&claim.atom.args, args, &mut s)
                {
                    out.push(s);
                }
            }
        }
        out
    }

    fn holds(&self, claim: &Claim, subst: &Substitution) -> bool {
        self.candidates(claim, subst).into_iter().any(|((_, principal), tuples)| {
            tuples.iter().any(|args| {
                let mut s = subst.clone();
                match_principal(claim.principal.as_ref(), principal.as_deref(), &mut s)
                    && match_args(&claim.atom.args, args, &mut s)
            })
        })
    }

    fn into_facts(self) -> BTreeSet<(FactKey, Vec<Value>)> {
        self.relations
            .into_iter()
            .flat_map(|(k, ts)| ts.into_iter().map(move |t| (k.clone(), t)))
            .collect()
    }
}

/// Enumerates the extensions of `init` satisfying a rule body. When
/// `delta` is given, the positive literal at that body index is matched
/// against the delta relation instead of the full database.
fn solve_body(
    rule: &Rule,
    db: &Db,
    delta: Option<(usize, &Db)>,
    init: Substitution,
) -> Result<Vec<Substitution>, EngineError> {
    let mut partial = vec![init];
    for (i, lit) in rule.body.iter().enumerate() {
        if let Literal::Pos(c) = lit {
            let source = match delta {
                Some((j, d)) if j == i => d,
                _ => db,
            };
            partial = partial.iter().flat_map(|s| source.matches(c, s)).collect();
            if partial.is_empty() {
                return Ok(partial);
            }
        }
    }
    let mut out = Vec::with_capacity(partial.len());
    'next: for s in partial {
        for lit in &rule.body {
            match lit {
                Literal::Cmp(l, op, r) => {
                    if !compare(l, *op, r, &s)? {
                        continue 'next;
                    }
                }
                Literal::Neg(c) => {
                    if db.holds(c, &s) {
                        continue 'next;
                    }
                }
                Literal::Pos(_) => {}
            }
        }
        out.push(s);
    }
    Ok(out)
}

fn head_fact(rule: &Rule, s: &Substitution) -> (FactKey, Vec<Value>) {
    let (principal, atom) = ground_claim(&rule.head, s).expect("safe rule grounds its head");
    ((atom.predicate, principal), atom.args)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvalReport {
    pub iterations: u64,
    pub rule_firings: u64,
    /// Facts added by this evaluation, in derivation order.
    pub new_facts: Vec<AttestedFact>,
}

/// Closes `store` under the program, stratum by stratum. Derived facts are
/// stamped with the store's current revision.
pub fn evaluate(strata: &Strata, store: &mut FactStore) -> Result<EvalReport, EngineError> {
    store.declare(strata.predicate_stratum.keys().map(String::as_str));
    let mut db = Db::from_store(store);
    for c in &strata.program.rules.facts {
        let f = AttestedFact::from_claim(c, store.current_revision(), None, true)?;
        if !store.contains(f.principal.as_deref(), &f.atom) {
            store.assert_fact(f.clone())?;
        }
        db.insert(f.key(), f.atom.args);
    }
    let mut report = EvalReport::default();
    let mut added: Vec<(FactKey, Vec<Value>)> = Vec::new();

    for level in &strata.levels {
        let local: BTreeSet<&str> = level.predicates.iter().map(String::as_str).collect();

        let mut delta = Db::default();
        for rule in &level.rules {
            for s in solve_body(rule, &db, None, Substitution::new())? {
                report.rule_firings += 1;
                let (key, args) = head_fact(rule, &s);
                if !db.contains(&key, &args) {
                    delta.insert(key, args);
                }
            }
        }
        report.iterations += 1;

        while !delta.is_empty() {
            for (key, args) in delta.clone().into_facts() {
                db.insert(key.clone(), args.clone());
                added.push((key, args));
            }
            let mut next = Db::default();
            for rule in &level.rules {
                for (i, lit) in rule.body.iter().enumerate() {
                    let Literal::Pos(c) = lit else { continue };
                    if !local.contains(c.predicate()) {
                        continue;
                    }
                    for s in solve_body(rule, &db, Some((i, &delta)), Substitution::new())? {
                        report.rule_firings += 1;
                        let (key, args) = head_fact(rule, &s);
                        if !db.contains(&key, &args) {
                            next.insert(key, args);
                        }
                    }
                }
            }
            report.iterations += 1;
            delta = next;
        }
    }

    let revision = store.current_revision();
    for ((predicate, principal), args) in added {
        let fact = AttestedFact {
            principal,
            atom: GroundAtom { predicate, args },
            revision,
            source: None,
            derived: true,
        };
        store.assert_fact(fact.clone())?;
        report.new_facts.push(fact);
    }
    Ok(report)
}

/// Substitutions under which `rule` derives the given fact from `store`.
pub fn rule_instances(
    rule: &Rule,
    store: &FactStore,
    principal: Option<&str>,
    atom: &GroundAtom,
) -> Result<Vec<Substitution>, EngineError> {
    let mut init = Substitution::new();
    if rule.head.predicate() != atom.predicate
        || !match_principal(rule.head.principal.as_ref(), principal, &mut init)
        || !match_args(&rule.head.atom.args, &atom.args, &mut init)
    {
        return Ok(Vec::new());
    }
    solve_body(rule, &Db::from_store(store), None, init)
}

/// All bindings of the goal's variables under which it holds in `store`.
pub fn query(store: &FactStore, goal: &Claim) -> Result<BTreeSet<Substitution>, EngineError> {
    if !store.is_known(goal.predicate()) {
        return Err(EngineError::UnknownPredicate(goal.predicate().to_string()));
    }
    let db = Db::from_store(store);
    Ok(db.matches(goal, &Substitution::new()).into_iter().collect())
}
