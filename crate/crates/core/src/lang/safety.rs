//! Range restriction and demand-driven parameters.
//!
//! A head variable that is absent from every positive body literal but is
//! constrained by a comparison (`End` in `exists_booking_before(Id,End,C) :-
//! booking(Id,T,C), T < End`) is treated as an input parameter. Such a
//! predicate is evaluated on demand: each call site contributes a
//! `demand_<pred>` rule binding the parameter positions, and the defining
//! rules are guarded by that demand literal. After the rewrite every rule is
//! range-restricted in the usual sense.

use std::collections::{BTreeMap, BTreeSet};

use super::ast::{Atom, Claim, Literal, Rule, RuleSet, Term};
use super::parser::check_arities;
use super::LangError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemandInfo {
    pub demand_predicate: String,
    /// Argument positions supplied by callers.
    pub positions: Vec<usize>,
}

/// A rule set that passed safety checking, with demand rewriting applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidatedRuleSet {
    pub rules: RuleSet,
    /// Per rule id: variables that occur only under a single negation and
    /// are read existentially.
    pub negation_local: BTreeMap<usize, BTreeSet<String>>,
    /// Demand-driven predicates keyed by name.
    pub demand: BTreeMap<String, DemandInfo>,
}

impl ValidatedRuleSet {
    pub fn rule(&self, id: usize) -> Option<&Rule> {
        self.rules.rule(id)
    }

    /// Restricts to the given rule ids, keeping the ids and the facts.
    pub fn subset(&self, ids: &BTreeSet<usize>) -> ValidatedRuleSet {
        let rules: Vec<Rule> = self
            .rules
            .rules
            .iter()
            .filter(|r| ids.contains(&r.id))
            .cloned()
            .collect();
        let preds: BTreeSet<&str> = rules.iter().map(|r| r.head.predicate()).collect();
        ValidatedRuleSet {
            negation_local: self
                .negation_local
                .iter()
                .filter(|(id, _)| ids.contains(id))
                .map(|(k, v)| (*k, v.clone()))
                .collect(),
            demand: self
                .demand
                .iter()
                .filter(|(p, _)| preds.contains(p.as_str()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            rules: RuleSet {
                rules,
                facts: self.rules.facts.clone(),
            },
        }
    }
}

fn unsafe_rule(rule: usize, variable: &str, reason: &str) -> LangError {
    LangError::UnsafeRule {
        rule,
        variable: variable.to_string(),
        reason: reason.to_string(),
    }
}

struct RuleVars {
    /// Head variables supplied by callers.
    params: BTreeSet<String>,
    negation_local: BTreeSet<String>,
}

fn analyse(rule: &Rule) -> Result<RuleVars, LangError> {
    let positive: BTreeSet<&str> = rule.positive_vars();
    let in_cmp: BTreeSet<&str> = rule
        .body
        .iter()
        .filter(|l| matches!(l, Literal::Cmp(..)))
        .flat_map(Literal::vars)
        .collect();

    if let Some(Term::Var(v)) = &rule.head.principal {
        if !positive.contains(v.as_str()) {
            return Err(unsafe_rule(rule.id, v, "attesting principal is not bound by a positive literal"));
        }
    }

    let mut params = BTreeSet::new();
    for v in rule.head.atom.vars() {
        if positive.contains(v) {
            continue;
        }
        if in_cmp.contains(v) {
            params.insert(v.to_string());
        } else {
            return Err(unsafe_rule(rule.id, v, "occurs in the head but in no positive body literal"));
        }
    }

    for v in &in_cmp {
        if !positive.contains(v) && !params.contains(*v) {
            return Err(unsafe_rule(rule.id, v, "is used in a comparison but bound by no positive literal"));
        }
    }

    let mut negation_local = BTreeSet::new();
    let mut seen_in_negation: BTreeSet<&str> = BTreeSet::new();
    for lit in &rule.body {
        if let Literal::Neg(c) = lit {
            let local: BTreeSet<&str> = c
                .vars()
                .filter(|v| !positive.contains(v) && !params.contains(*v))
                .collect();
            for v in local {
                if !seen_in_negation.insert(v) {
                    return Err(unsafe_rule(rule.id, v, "is shared between negated literals but bound by no positive literal"));
                }
                negation_local.insert(v.to_string());
            }
        }
    }

    Ok(RuleVars {
        params,
        negation_local,
    })
}

fn fresh_name(base: String, taken: &BTreeSet<String>) -> String {
    if !taken.contains(&base) {
        return base;
    }
    (1..)
        .map(|i| format!("{base}_{i}"))
        .find(|n| !taken.contains(n))
        .expect("unbounded suffix search")
}

/// Checks range restriction and rewrites demand-driven predicates.
pub fn check_safety(rs: RuleSet) -> Result<ValidatedRuleSet, LangError> {
    let mut ids = BTreeSet::new();
    for r in &rs.rules {
        if !ids.insert(r.id) {
            return Err(unsafe_rule(r.id, "", "rule id collision"));
        }
    }

    let mut analysed = BTreeMap::new();
    for r in &rs.rules {
        analysed.insert(r.id, analyse(r)?);
    }

    // Parameter positions per predicate.
    let mut positions: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for r in &rs.rules {
        let vars = &analysed[&r.id];
        for (i, t) in r.head.atom.args.iter().enumerate() {
            if let Term::Var(v) = t {
                if vars.params.contains(v) {
                    positions.entry(r.head.predicate().to_string()).or_default().insert(i);
                }
            }
        }
    }

    let mut taken: BTreeSet<String> = rs
        .rules
        .iter()
        .flat_map(|r| std::iter::once(&r.head).chain(r.body.iter().filter_map(Literal::claim)))
        .chain(rs.facts.iter())
        .map(|c| c.predicate().to_string())
        .collect();
    let mut demand = BTreeMap::new();
    for (pred, pos) in &positions {
        let name = fresh_name(format!("demand_{pred}"), &taken);
        taken.insert(name.clone());
        demand.insert(
            pred.clone(),
            DemandInfo {
                demand_predicate: name,
                positions: pos.iter().copied().collect(),
            },
        );
    }

    let demand_literal = |pred: &str, atom: &Atom| -> Option<Literal> {
        demand.get(pred).map(|d| {
            Literal::Pos(Claim::plain(Atom {
                predicate: d.demand_predicate.clone(),
                args: d.positions.iter().map(|&i| atom.args[i].clone()).collect(),
            }))
        })
    };

    let mut rules = Vec::with_capacity(rs.rules.len());
    let mut extra = Vec::new();
    let mut next_id = rs.rules.iter().map(|r| r.id + 1).max().unwrap_or(0);
    for r in &rs.rules {
        let own_demand = demand_literal(r.head.predicate(), &r.head.atom);

        // One demand rule per call site of a demand-driven predicate.
        for (site, lit) in r.body.iter().enumerate() {
            let Some(claim) = lit.claim() else { continue };
            let Some(call_demand) = demand_literal(claim.predicate(), &claim.atom) else {
                continue;
            };
            let callee = claim.predicate();
            let mut body: Vec<Literal> = own_demand.iter().cloned().collect();
            body.extend(r.body.iter().enumerate().filter_map(|(j, l)| match l {
                Literal::Pos(c) if j != site && c.predicate() != callee => Some(l.clone()),
                _ => None,
            }));
            let bound: BTreeSet<String> = body
                .iter()
                .filter_map(Literal::claim)
                .flat_map(|c| c.vars().map(str::to_string))
                .collect();
            body.extend(r.body.iter().filter(|l| {
                matches!(l, Literal::Cmp(..)) && l.vars().iter().all(|v| bound.contains(*v))
            }).cloned());
            let Literal::Pos(head) = call_demand else { unreachable!() };
            for v in head.vars() {
                if !bound.contains(v) {
                    return Err(unsafe_rule(
                        r.id,
                        v,
                        &format!("must be bound at the call to demand-driven predicate `{callee}`"),
                    ));
                }
            }
            if body.is_empty() {
                // Constant demand: anchor it with a trivially true comparison.
                body.push(Literal::Cmp(Term::int(0), super::CmpOp::Eq, Term::int(0)));
            }
            extra.push(Rule {
                id: next_id,
                head,
                body,
            });
            next_id += 1;
        }

        let mut rewritten = r.clone();
        if let Some(d) = own_demand {
            rewritten.body.insert(0, d);
        }
        rules.push(rewritten);
    }
    rules.extend(extra);

    // Demand rules are deduplicated on their text, keeping the first id.
    let mut seen = BTreeSet::new();
    rules.retain(|r| demand.values().all(|d| d.demand_predicate != r.head.predicate()) || seen.insert((r.head.clone(), r.body.clone())));

    let mut negation_local: BTreeMap<usize, BTreeSet<String>> = analysed
        .into_iter()
        .map(|(id, v)| (id, v.negation_local))
        .collect();
    for r in &rules {
        negation_local.entry(r.id).or_default();
        let positive = r.positive_vars();
        if let Some(v) = r.head.vars().find(|v| !positive.contains(v)) {
            return Err(unsafe_rule(r.id, v, "occurs in the head but in no positive body literal"));
        }
    }

    let out = RuleSet {
        rules,
        facts: rs.facts,
    };
    check_arities(&out)?;
    Ok(ValidatedRuleSet {
        rules: out,
        negation_local,
        demand,
    })
}
