use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::ast::{Literal, Rule};
use super::safety::ValidatedRuleSet;
use super::LangError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Level {
    /// Predicates in first-occurrence order.
    pub predicates: Vec<String>,
    /// Rules whose head lives in this level, in program order.
    pub rules: Vec<Rule>,
}

/// A validated program partitioned into strata, lowest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Strata {
    pub program: ValidatedRuleSet,
    pub levels: Vec<Level>,
    pub predicate_stratum: BTreeMap<String, usize>,
}

impl Strata {
    pub fn stratum_of(&self, predicate: &str) -> Option<usize> {
        self.predicate_stratum.get(predicate).copied()
    }

    pub fn rule_stratum(&self, rule: &Rule) -> usize {
        self.predicate_stratum[rule.head.predicate()]
    }

    pub fn rules(&self) -> impl Iterator<Item = &Rule> {
        self.program.rules.rules.iter()
    }
}

fn first_occurrence(rs: &ValidatedRuleSet) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut order = Vec::new();
    let claims = rs
        .rules
        .rules
        .iter()
        .flat_map(|r| std::iter::once(&r.head).chain(r.body.iter().filter_map(Literal::claim)))
        .chain(rs.rules.facts.iter());
    for c in claims {
        if seen.insert(c.predicate()) {
            order.push(c.predicate().to_string());
        }
    }
    order
}

/// Assigns every predicate the least stratum compatible with its negative
/// dependencies.
pub fn stratify(rs: ValidatedRuleSet) -> Result<Strata, LangError> {
    let order = first_occurrence(&rs);
    let mut stratum: BTreeMap<&str, usize> = order.iter().map(|p| (p.as_str(), 0)).collect();
    let limit = order.len();

    let mut changed = true;
    while changed {
        changed = false;
        for r in &rs.rules.rules {
            let head = r.head.predicate();
            for (dep, positive) in r.body_predicates() {
                let need = stratum[dep] + usize::from(!positive);
                if stratum[head] < need {
                    if need > limit {
                        return Err(LangError::NotStratifiable {
                            cycle: negative_cycle(&rs).unwrap_or_default(),
                        });
                    }
                    stratum.insert(head, need);
                    changed = true;
                }
            }
        }
    }

    let height = stratum.values().max().map_or(0, |m| m + 1);
    let mut levels: Vec<Level> = (0..height)
        .map(|_| Level {
            predicates: Vec::new(),
            rules: Vec::new(),
        })
        .collect();
    for p in &order {
        levels[stratum[p.as_str()]].predicates.push(p.clone());
    }
    for r in &rs.rules.rules {
        levels[stratum[r.head.predicate()]].rules.push(r.clone());
    }
    let predicate_stratum = stratum.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    Ok(Strata {
        program: rs,
        levels,
        predicate_stratum,
    })
}

/// Finds a dependency cycle through a negated edge, listed from the
/// negating head.
fn negative_cycle(rs: &ValidatedRuleSet) -> Option<Vec<String>> {
    // Edge head -> dep: head depends on dep.
    let mut edges: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in &rs.rules.rules {
        for (dep, _) in r.body_predicates() {
            edges.entry(r.head.predicate()).or_default().insert(dep);
        }
    }
    for r in &rs.rules.rules {
        let head = r.head.predicate();
        for (dep, positive) in r.body_predicates() {
            if positive {
                continue;
            }
            // Path dep ->* head closes the cycle.
            let mut prev: BTreeMap<&str, &str> = BTreeMap::new();
            let mut queue = VecDeque::from([dep]);
            let mut visited = BTreeSet::from([dep]);
            while let Some(n) = queue.pop_front() {
                if n == head {
                    let mut path = vec![head.to_string()];
                    let mut cur = head;
                    while cur != dep {
                        cur = prev[cur];
                        path.push(cur.to_string());
                    }
                    path.reverse();
                    // path runs dep .. head; present it head first.
                    path.rotate_right(1);
                    path.dedup();
                    return Some(path);
                }
                for &next in edges.get(n).into_iter().flatten() {
                    if visited.insert(next) {
                        prev.insert(next, n);
                        queue.push_back(next);
                    }
                }
            }
        }
    }
    None
}
