//! Top-down proof search over the common log and independent checking of
//! the resulting proof trees.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::common_log::CommonLog;
use super::{event_fact, MonitorError};
use crate::crypto::{verify_event, KeyRegistry, SignedEvent};
use crate::engine::matching::{compare, ground_claim, match_args, match_principal, match_term};
use crate::engine::{GroundAtom, Substitution};
use crate::lang::{Claim, Literal, RuleSet, Term, Value};
use crate::merkle::{hex_hash, leaf_hash, verify_inclusion, Hash, MerkleAuditPath, TreeState};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum ProofNode {
    FactLeaf {
        principal: Option<String>,
        fact: GroundAtom,
        log_index: u64,
        path: MerkleAuditPath,
        signer: String,
        event: SignedEvent,
    },
    RuleNode {
        rule_id: usize,
        substitution: Substitution,
        principal: Option<String>,
        fact: GroundAtom,
        children: Vec<ProofNode>,
    },
}

impl ProofNode {
    pub fn conclusion(&self) -> (Option<&str>, &GroundAtom) {
        match self {
            ProofNode::FactLeaf { principal, fact, .. } | ProofNode::RuleNode { principal, fact, .. } => {
                (principal.as_deref(), fact)
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            ProofNode::FactLeaf { .. } => 1,
            ProofNode::RuleNode { children, .. } => 1 + children.iter().map(ProofNode::depth).max().unwrap_or(0),
        }
    }

    /// Log indices of the leaves, left to right.
    pub fn leaf_indices(&self) -> Vec<u64> {
        match self {
            ProofNode::FactLeaf { log_index, .. } => vec![*log_index],
            ProofNode::RuleNode { children, .. } => children.iter().flat_map(ProofNode::leaf_indices).collect(),
        }
    }
}

/// A derivation whose leaves are logged, signed events. The header is the
/// log state every inclusion path is checked against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofTree {
    #[serde(with = "hex_hash")]
    pub root_hash: Hash,
    pub tree_size: u64,
    pub root: ProofNode,
}

impl ProofTree {
    pub fn state(&self) -> TreeState {
        TreeState {
            size: self.tree_size,
            root_hash: self.root_hash,
        }
    }
}

type Solutions = Vec<(Substitution, ProofNode)>;

/// Memoized SLD-style search. Rules are tried by id, then logged facts by
/// ascending index; the first proof found wins.
pub struct Prover<'a> {
    rules: &'a RuleSet,
    log: &'a CommonLog,
    include_rejected: bool,
    memo: HashMap<String, Solutions>,
    active: HashSet<String>,
    /// Goals expanded so far.
    pub steps: u64,
}

fn instantiate(claim: &Claim, env: &Substitution) -> Claim {
    let term = |t: &Term| match t {
        Term::Var(v) => env.get(v).cloned().map(Term::Const).unwrap_or_else(|| t.clone()),
        _ => t.clone(),
    };
    Claim {
        principal: claim.principal.as_ref().map(|p| match term(p) {
            Term::Const(v) => Term::Const(Value::Str(v.principal_name())),
            other => other,
        }),
        atom: crate::lang::Atom {
            predicate: claim.atom.predicate.clone(),
            args: claim.atom.args.iter().map(term).collect(),
        },
    }
}

impl<'a> Prover<'a> {
    pub fn new(rules: &'a RuleSet, log: &'a CommonLog, include_rejected: bool) -> Self {
        Prover {
            rules,
            log,
            include_rejected,
            memo: HashMap::new(),
            active: HashSet::new(),
            steps: 0,
        }
    }

    /// First proof of `goal`, if any.
    pub fn prove(&mut self, goal: &Claim) -> Result<Option<ProofTree>, MonitorError> {
        let state = self.log.state();
        Ok(self.solve(goal)?.into_iter().next().map(|(_, root)| ProofTree {
            root_hash: state.root_hash,
            tree_size: state.size,
            root,
        }))
    }

    fn solve(&mut self, goal: &Claim) -> Result<Solutions, MonitorError> {
        let key = goal.to_string();
        if let Some(hit) = self.memo.get(&key) {
            return Ok(hit.clone());
        }
        if !self.active.insert(key.clone()) {
            return Ok(Vec::new());
        }
        self.steps += 1;
        let mut out = Vec::new();
        let rules = self.rules;
        for rule in rules.rules.iter().filter(|r| r.head.predicate() == goal.predicate()) {
            if rule.has_negation() {
                continue;
            }
            let mut init = Substitution::new();
            if let Some(Term::Const(p)) = &goal.principal {
                if !match_principal(rule.head.principal.as_ref(), Some(&p.principal_name()), &mut init) {
                    continue;
                }
            } else if goal.principal.is_none() != rule.head.principal.is_none() {
                continue;
            }
            let consts_match = rule.head.atom.args.iter().zip(&goal.atom.args).all(|(h, g)| match g {
                Term::Const(c) => match_term(h, c, &mut init),
                _ => true,
            });
            if !consts_match {
                continue;
            }
            for (env, children) in self.solve_body(&rule.body, init)? {
                let Some((principal, fact)) = ground_claim(&rule.head, &env) else {
                    continue;
                };
                let mut bindings = Substitution::new();
                if match_principal(goal.principal.as_ref(), principal.as_deref(), &mut bindings)
                    && match_args(&goal.atom.args, &fact.args, &mut bindings)
                {
                    out.push((
                        bindings,
                        ProofNode::RuleNode {
                            rule_id: rule.id,
                            substitution: env,
                            principal,
                            fact,
                            children,
                        },
                    ));
                }
            }
        }
        for f in self.log.facts_of(goal.predicate()) {
            if !self.include_rejected && self.log.is_rejected(f.index) {
                continue;
            }
            let mut bindings = Substitution::new();
            if match_principal(goal.principal.as_ref(), f.principal.as_deref(), &mut bindings)
                && match_args(&goal.atom.args, &f.atom.args, &mut bindings)
            {
                let event = self.log.entry(f.index).expect("indexed fact has an entry").clone();
                out.push((
                    bindings,
                    ProofNode::FactLeaf {
                        principal: f.principal.clone(),
                        fact: f.atom.clone(),
                        log_index: f.index,
                        path: self.log.inclusion_proof(f.index)?,
                        signer: event.signer.clone(),
                        event,
                    },
                ));
            }
        }
        self.active.remove(&key);
        self.memo.insert(key, out.clone());
        Ok(out)
    }

    fn solve_body(
        &mut self,
        body: &[Literal],
        init: Substitution,
    ) -> Result<Vec<(Substitution, Vec<ProofNode>)>, MonitorError> {
        let mut partial = vec![(init, Vec::new())];
        for lit in body {
            let Literal::Pos(c) = lit else { continue };
            let mut next = Vec::new();
            for (env, children) in partial {
                for (bindings, node) in self.solve(&instantiate(c, &env))? {
                    let mut env = env.clone();
                    env.extend(bindings);
                    let mut children = children.clone();
                    children.push(node);
                    next.push((env, children));
                }
            }
            partial = next;
            if partial.is_empty() {
                return Ok(partial);
            }
        }
        let mut out = Vec::new();
        'next: for (env, children) in partial {
            for lit in body {
                if let Literal::Cmp(l, op, r) = lit {
                    if !compare(l, *op, r, &env)? {
                        continue 'next;
                    }
                }
            }
            out.push((env, children));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ProofError {
    #[error("tree header does not match the log state")]
    HeaderMismatch,
    #[error("signature of log entry {0} does not verify")]
    BadSignature(u64),
    #[error("inclusion proof of log entry {0} does not verify")]
    InclusionFailure(u64),
    #[error("log entry {0} does not carry the claimed fact")]
    FactMismatch(u64),
    #[error("unknown rule {0}")]
    UnknownRule(usize),
    #[error("rule {rule} instance is invalid: {reason}")]
    Instantiation { rule: usize, reason: String },
}

/// Checks a proof tree using only the program, the key registry and a log
/// state: signatures, inclusion paths and every rule instance.
pub fn verify_proof_tree(
    rules: &RuleSet,
    reg: &KeyRegistry,
    state: &TreeState,
    tree: &ProofTree,
) -> Result<(), ProofError> {
    if tree.state() != *state {
        return Err(ProofError::HeaderMismatch);
    }
    verify_node(rules, reg, state, &tree.root)
}

fn verify_node(rules: &RuleSet, reg: &KeyRegistry, state: &TreeState, node: &ProofNode) -> Result<(), ProofError> {
    match node {
        ProofNode::FactLeaf {
            principal,
            fact,
            log_index,
            path,
            signer,
            event,
        } => {
            if *signer != event.signer || !matches!(verify_event(reg, event), Ok(true)) {
                return Err(ProofError::BadSignature(*log_index));
            }
            if path.leaf_index != *log_index || !verify_inclusion(state, &leaf_hash(&event.to_record()), path) {
                return Err(ProofError::InclusionFailure(*log_index));
            }
            if event_fact(event) != Some((principal.clone(), fact.clone())) {
                return Err(ProofError::FactMismatch(*log_index));
            }
            Ok(())
        }
        ProofNode::RuleNode {
            rule_id,
            substitution,
            principal,
            fact,
            children,
        } => {
            let rule = rules.rule(*rule_id).ok_or(ProofError::UnknownRule(*rule_id))?;
            let bad = |reason: &str| ProofError::Instantiation {
                rule: *rule_id,
                reason: reason.to_string(),
            };
            if rule.has_negation() {
                return Err(bad("rule uses negation"));
            }
            if ground_claim(&rule.head, substitution) != Some((principal.clone(), fact.clone())) {
                return Err(bad("head does not match conclusion"));
            }
            let positives: Vec<&Claim> = rule
                .body
                .iter()
                .filter_map(|l| match l {
                    Literal::Pos(c) => Some(c),
                    _ => None,
                })
                .collect();
            if positives.len() != children.len() {
                return Err(bad("child count differs from positive body literals"));
            }
            for (lit, child) in positives.iter().zip(children) {
                let (p, a) = child.conclusion();
                if ground_claim(lit, substitution) != Some((p.map(str::to_string), a.clone())) {
                    return Err(bad("child does not match body literal"));
                }
            }
            for lit in &rule.body {
                if let Literal::Cmp(l, op, r) = lit {
                    if !compare(l, *op, r, substitution).unwrap_or(false) {
                        return Err(bad("comparison does not hold"));
                    }
                }
            }
            children.iter().try_for_each(|c| verify_node(rules, reg, state, c))
        }
    }
}
