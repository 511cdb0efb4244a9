//! Test-only helpers: random program and spec generators, and two fixpoint
//! oracles that share no code with the evaluator.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use auditrv::lang::{compile, parse_spec, CmpOp, Literal, RuleSet, Term, Value};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// (principal, predicate, args)
pub type OracleFact = (Option<String>, String, Vec<Value>);

const PRINCIPALS: [&str; 2] = ["a", "b"];

fn pick<'a, R: Rng>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).unwrap()
}

/// Renders a random program (at most 5 rules over e, p, q) and at most 20
/// attested `e` facts. Returned programs always compile.
pub fn random_program<R: Rng>(rng: &mut R) -> String {
    loop {
        let text = try_random_program(rng);
        if compile(&text).is_ok() {
            return text;
        }
    }
}

fn try_random_program<R: Rng>(rng: &mut R) -> String {
    // Per derived predicate: attested by 'a' or plain.
    let attested: BTreeMap<&str, bool> = [("p", rng.gen_bool(0.5)), ("q", rng.gen_bool(0.5))].into();
    let claim = |rng: &mut R, pred: &str, args: &[String]| -> String {
        let prefix = match pred {
            "e" => match rng.gen_range(0..3) {
                0 => "'a' attests ".to_string(),
                1 => "'b' attests ".to_string(),
                _ => "P attests ".to_string(),
            },
            _ if attested[pred] => "'a' attests ".to_string(),
            _ => String::new(),
        };
        format!("{prefix}{pred}({})", args.join(","))
    };

    let mut out = String::new();
    for _ in 0..rng.gen_range(0..=20) {
        out.push_str(&format!(
            "'{}' attests e({},{}).\n",
            pick(rng, &PRINCIPALS),
            rng.gen_range(0..4),
            rng.gen_range(0..4)
        ));
    }

    let vars = ["X", "Y", "Z"];
    for _ in 0..rng.gen_range(1..=5) {
        let head = pick(rng, &["p", "q"]);
        let mut body = Vec::new();
        let mut bound: BTreeSet<String> = BTreeSet::new();
        for _ in 0..rng.gen_range(1..=3) {
            let pred = pick(rng, &["e", "e", "p", "q"]);
            let args: Vec<String> = (0..2)
                .map(|_| {
                    if rng.gen_bool(0.2) {
                        rng.gen_range(0..4).to_string()
                    } else {
                        pick(rng, &vars).to_string()
                    }
                })
                .collect();
            let c = claim(rng, pred, &args);
            bound.extend(args.iter().filter(|a| a.starts_with(char::is_uppercase)).cloned());
            if c.starts_with("P ") {
                bound.insert("P".into());
            }
            body.push(c);
        }
        let bound_vars: Vec<String> = bound.iter().filter(|v| *v != "P").cloned().collect();
        let term = |rng: &mut R| -> String {
            if bound_vars.is_empty() || rng.gen_bool(0.2) {
                rng.gen_range(0..4).to_string()
            } else {
                bound_vars.choose(rng).unwrap().clone()
            }
        };
        if rng.gen_bool(0.4) {
            let pred = pick(rng, &["e", "p", "q"]);
            let a = term(rng);
            let b = if rng.gen_bool(0.3) { "W".to_string() } else { term(rng) };
            let c = claim(rng, pred, &[a, b]);
            let c = if c.starts_with("P ") && !bound.contains("P") { c.replacen("P ", "Q ", 1) } else { c };
            body.push(format!("not {c}"));
        }
        if rng.gen_bool(0.3) {
            let op = pick(rng, &["<", "<=", "!=", "=", ">"]);
            let lhs = term(rng);
            let lhs = if rng.gen_bool(0.3) && lhs.starts_with(char::is_uppercase) {
                format!("{lhs} + 1")
            } else {
                lhs
            };
            body.push(format!("{lhs} {op} {}", term(rng)));
        }
        let head_args = [term(rng), term(rng)];
        out.push_str(&format!("{} :- {}.\n", claim(rng, head, &head_args), body.join(", ")));
    }
    out
}

fn value_domain(rs: &RuleSet) -> Vec<Value> {
    let mut dom: BTreeSet<Value> = BTreeSet::new();
    let claims = rs
        .facts
        .iter()
        .chain(rs.rules.iter().flat_map(|r| std::iter::once(&r.head).chain(r.body.iter().filter_map(Literal::claim))));
    for c in claims {
        if let Some(Term::Const(v)) = &c.principal {
            dom.insert(Value::Str(v.principal_name()));
        }
        for t in &c.atom.args {
            if let Term::Const(v) = t {
                dom.insert(v.clone());
            }
        }
    }
    for r in &rs.rules {
        for l in &r.body {
            if let Literal::Cmp(a, _, b) = l {
                for t in [a, b] {
                    if let Term::Const(v) = t {
                        dom.insert(v.clone());
                    }
                }
            }
        }
    }
    dom.into_iter().collect()
}

fn eval_term(t: &Term, env: &BTreeMap<String, Value>) -> Option<Value> {
    match t {
        Term::Const(v) => Some(v.clone()),
        Term::Var(v) => env.get(v).cloned(),
        Term::Sum(v, k) => match env.get(v)? {
            Value::Int(x) => Some(Value::Int(x + k)),
            _ => None,
        },
    }
}

fn ground(c: &auditrv::lang::Claim, env: &BTreeMap<String, Value>) -> Option<OracleFact> {
    let principal = match &c.principal {
        None => None,
        Some(t) => Some(eval_term(t, env)?.principal_name()),
    };
    let args = c.atom.args.iter().map(|t| eval_term(t, env)).collect::<Option<Vec<_>>>()?;
    Some((principal, c.atom.predicate.clone(), args))
}

fn cmp_holds(a: &Value, op: CmpOp, b: &Value) -> bool {
    use std::cmp::Ordering::*;
    let ord = match (a, b) {
        (Value::Int(x), Value::Int(y)) => Some(x.cmp(y)),
        (Value::Str(x), Value::Str(y)) | (Value::Sym(x), Value::Sym(y)) => Some(x.cmp(y)),
        _ => None,
    };
    match op {
        CmpOp::Eq => a == b,
        CmpOp::Ne => a != b,
        CmpOp::Lt => ord == Some(Less),
        CmpOp::Le => matches!(ord, Some(Less | Equal)),
        CmpOp::Gt => ord == Some(Greater),
        CmpOp::Ge => matches!(ord, Some(Greater | Equal)),
    }
}

fn assignments(vars: &[String], dom: &[Value]) -> Vec<BTreeMap<String, Value>> {
    let mut out = vec![BTreeMap::new()];
    for v in vars {
        out = out
            .into_iter()
            .flat_map(|env| {
                dom.iter().map(move |d| {
                    let mut e = env.clone();
                    e.insert(v.clone(), d.clone());
                    e
                })
            })
            .collect();
    }
    out
}

/// Naive full fixpoint: per stratum, instantiate every rule over every
/// assignment of the active domain until nothing changes.
pub fn naive_fixpoint(text: &str) -> BTreeSet<OracleFact> {
    let rs = parse_spec(text).unwrap();
    let dom = value_domain(&rs);

    // Own stratification by relaxation.
    let mut stratum: BTreeMap<String, usize> = BTreeMap::new();
    for r in &rs.rules {
        stratum.entry(r.head.atom.predicate.clone()).or_insert(0);
        for l in &r.body {
            if let Some(c) = l.claim() {
                stratum.entry(c.atom.predicate.clone()).or_insert(0);
            }
        }
    }
    loop {
        let mut changed = false;
        for r in &rs.rules {
            for l in &r.body {
                let (pred, bump) = match l {
                    Literal::Pos(c) => (&c.atom.predicate, 0),
                    Literal::Neg(c) => (&c.atom.predicate, 1),
                    Literal::Cmp(..) => continue,
                };
                let need = stratum[pred] + bump;
                if stratum[&r.head.atom.predicate] < need {
                    stratum.insert(r.head.atom.predicate.clone(), need);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let mut facts: BTreeSet<OracleFact> = rs
        .facts
        .iter()
        .map(|c| ground(c, &BTreeMap::new()).unwrap())
        .collect();
    let top = stratum.values().copied().max().unwrap_or(0);
    for level in 0..=top {
        loop {
            let mut new = BTreeSet::new();
            for r in rs.rules.iter().filter(|r| stratum[&r.head.atom.predicate] == level) {
                let positive: BTreeSet<String> = r
                    .body
                    .iter()
                    .filter_map(|l| match l {
                        Literal::Pos(c) => Some(c.vars().map(str::to_string).collect::<Vec<_>>()),
                        _ => None,
                    })
                    .flatten()
                    .collect();
                let vars: Vec<String> = positive.into_iter().collect();
                'env: for env in assignments(&vars, &dom) {
                    for l in &r.body {
                        let ok = match l {
                            Literal::Pos(c) => facts.contains(&ground(c, &env).unwrap()),
                            Literal::Cmp(a, op, b) => match (eval_term(a, &env), eval_term(b, &env)) {
                                (Some(x), Some(y)) => cmp_holds(&x, *op, &y),
                                _ => false,
                            },
                            Literal::Neg(c) => {
                                let local: Vec<String> =
                                    c.vars().filter(|v| !env.contains_key(*v)).map(str::to_string).collect();
                                !assignments(&local, &dom).into_iter().any(|mut ext| {
                                    ext.extend(env.clone());
                                    facts.contains(&ground(c, &ext).unwrap())
                                })
                            }
                        };
                        if !ok {
                            continue 'env;
                        }
                    }
                    let f = ground(&r.head, &env).unwrap();
                    if !facts.contains(&f) {
                        new.insert(f);
                    }
                }
            }
            if new.is_empty() {
                break;
            }
            facts.extend(new);
        }
    }
    facts
}

fn unify(c: &auditrv::lang::Claim, fact: &OracleFact, env: &BTreeMap<String, Value>) -> Option<BTreeMap<String, Value>> {
    let (fp, fpred, fargs) = fact;
    if *fpred != c.atom.predicate || fargs.len() != c.atom.args.len() {
        return None;
    }
    let mut env = env.clone();
    let bind = |t: &Term, v: Value, env: &mut BTreeMap<String, Value>| -> bool {
        match t {
            Term::Const(k) => *k == v,
            Term::Var(x) => match env.get(x) {
                Some(b) => *b == v,
                None => {
                    env.insert(x.clone(), v);
                    true
                }
            },
            Term::Sum(..) => eval_term(t, env) == Some(v),
        }
    };
    match (&c.principal, fp) {
        (None, None) => {}
        (Some(Term::Const(k)), Some(p)) if k.principal_name() == *p => {}
        (Some(Term::Var(x)), Some(p)) => {
            if !bind(&Term::Var(x.clone()), Value::Str(p.clone()), &mut env) {
                return None;
            }
        }
        _ => return None,
    }
    for (t, v) in c.atom.args.iter().zip(fargs) {
        if !bind(t, v.clone(), &mut env) {
            return None;
        }
    }
    Some(env)
}

/// Stratified fixpoint by nested-loop joins: each rule is re-evaluated in
/// full every round. Head variables bound by no positive literal range
/// over the integer part of the active domain.
pub fn join_fixpoint(text: &str) -> BTreeSet<OracleFact> {
    let rs = parse_spec(text).unwrap();
    let mut stratum: BTreeMap<String, usize> = BTreeMap::new();
    for r in &rs.rules {
        stratum.entry(r.head.atom.predicate.clone()).or_insert(0);
        for c in r.body.iter().filter_map(Literal::claim) {
            stratum.entry(c.atom.predicate.clone()).or_insert(0);
        }
    }
    loop {
        let mut changed = false;
        for r in &rs.rules {
            for l in &r.body {
                let (pred, bump) = match l {
                    Literal::Pos(c) => (&c.atom.predicate, 0),
                    Literal::Neg(c) => (&c.atom.predicate, 1),
                    Literal::Cmp(..) => continue,
                };
                let need = stratum[pred] + bump;
                if stratum[&r.head.atom.predicate] < need {
                    stratum.insert(r.head.atom.predicate.clone(), need);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut facts: BTreeSet<OracleFact> = rs
        .facts
        .iter()
        .map(|c| ground(c, &BTreeMap::new()).unwrap())
        .collect();
    let top = stratum.values().copied().max().unwrap_or(0);
    for level in 0..=top {
        loop {
            let ints: Vec<Value> = facts
                .iter()
                .flat_map(|(_, _, a)| a.iter().filter(|v| matches!(v, Value::Int(_))).cloned())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let mut new = BTreeSet::new();
            for r in rs.rules.iter().filter(|r| stratum[&r.head.atom.predicate] == level) {
                let mut envs = vec![BTreeMap::new()];
                for c in r.body.iter().filter_map(|l| match l {
                    Literal::Pos(c) => Some(c),
                    _ => None,
                }) {
                    envs = envs
                        .iter()
                        .flat_map(|env| facts.iter().filter_map(|f| unify(c, f, env)).collect::<Vec<_>>())
                        .collect();
                }
                let free: Vec<String> = r
                    .head
                    .vars()
                    .filter(|v| envs.first().is_some_and(|e| !e.contains_key(*v)))
                    .map(str::to_string)
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                let envs: Vec<_> = envs
                    .into_iter()
                    .flat_map(|e| {
                        assignments(&free, &ints).into_iter().map(move |mut x| {
                            x.extend(e.clone());
                            x
                        })
                    })
                    .collect();
                'env: for env in envs {
                    for l in &r.body {
                        let ok = match l {
                            Literal::Pos(_) => true,
                            Literal::Cmp(a, op, b) => match (eval_term(a, &env), eval_term(b, &env)) {
                                (Some(x), Some(y)) => cmp_holds(&x, *op, &y),
                                _ => false,
                            },
                            Literal::Neg(c) => !facts.iter().any(|f| unify(c, f, &env).is_some()),
                        };
                        if !ok {
                            continue 'env;
                        }
                    }
                    let f = ground(&r.head, &env).unwrap();
                    if !facts.contains(&f) {
                        new.insert(f);
                    }
                }
            }
            if new.is_empty() {
                break;
            }
            facts.extend(new);
        }
    }
    facts
}

/// Oracle fact for a component event, written independently of the
/// monitor: the receiver attests `kind(path, session, lamport, payload)`.
pub fn event_fact_text(e: &auditrv::crypto::Event) -> String {
    format!(
        "'{}' attests {}('{}', {}, {}, \"{}\").\n",
        e.receiver, e.kind, e.path, e.session_id, e.lamport_ts, e.payload
    )
}

/// Receiver and path of every delivery in the bundled flows.
const OBSERVED: [(&str, &str); 10] = [
    ("SB", "/booking_request"),
    ("MRM", "/resource_request"),
    ("SB", "/booking_options"),
    ("User", "/booking_options"),
    ("SB", "/select_booking"),
    ("MRM", "/mission"),
    ("Personnel", "/mission"),
    ("MRM", "/personnel_ready"),
    ("DO", "/ready_to_fly"),
    ("MRM", "/launch"),
];

struct Derived {
    name: String,
    attester: Option<String>,
}

struct Gen {
    rng: ChaCha8Rng,
    derived: Vec<Derived>,
    fresh: usize,
}

impl Gen {
    fn var(&mut self, stem: &str) -> String {
        self.fresh += 1;
        format!("{stem}{}", self.fresh)
    }

    fn base(&mut self, t: &str) -> (String, Option<String>) {
        let (r, p) = OBSERVED[self.rng.gen_range(0..OBSERVED.len())];
        let c = self.var("C");
        (format!("'{r}' attests postRequest('{p}',Id,{t},{c})"), Some(r.to_string()))
    }

    fn derived_lit(&mut self, j: usize, t: &str) -> (String, Option<String>) {
        let d = &self.derived[j];
        let lit = match &d.attester {
            Some(p) => format!("'{p}' attests {}(Id,{t})", d.name),
            None => format!("{}(Id,{t})", d.name),
        };
        (lit, d.attester.clone())
    }

    /// A positive literal binding `Id` and the time variable `t`.
    fn positive(&mut self, t: &str) -> (String, Option<String>) {
        if !self.derived.is_empty() && self.rng.gen_bool(0.4) {
            let j = self.rng.gen_range(0..self.derived.len());
            self.derived_lit(j, t)
        } else {
            self.base(t)
        }
    }

    fn spec(&mut self) -> String {
        let mut out = String::new();
        for i in 0..self.rng.gen_range(1..=3) {
            let t1 = self.var("T");
            let (first, who) = self.positive(&t1);
            let mut body = vec![first];
            if self.rng.gen_bool(0.5) {
                let t2 = self.var("T");
                body.push(self.positive(&t2).0);
            }
            let name = format!("d{i}");
            let attester = who.filter(|_| self.rng.gen_bool(0.5));
            let head = match &attester {
                Some(p) => format!("'{p}' attests {name}(Id,{t1})"),
                None => format!("{name}(Id,{t1})"),
            };
            out += &format!("{head} :- {}.\n", body.join(", "));
            self.derived.push(Derived { name, attester });
        }
        for k in 0..self.rng.gen_range(1..=2) {
            let t1 = self.var("T");
            let mut body = vec![self.positive(&t1).0];
            let mut times = vec![t1];
            if self.rng.gen_bool(0.5) {
                let t2 = self.var("T");
                body.push(self.positive(&t2).0);
                times.push(t2);
            }
            if self.rng.gen_bool(0.6) {
                let x = self.var("X");
                let lit = if self.rng.gen_bool(0.5) {
                    let j = self.rng.gen_range(0..self.derived.len());
                    self.derived_lit(j, &x).0
                } else {
                    self.base(&x).0
                };
                body.push(format!("not {lit}"));
            }
            if times.len() == 2 && self.rng.gen_bool(0.5) {
                let slack = self.rng.gen_range(0..60);
                body.push(format!("{} > {} + {slack}", times[1], times[0]));
            }
            out += &format!("forbidden_{k}(Id) :- {}.\n", body.join(", "));
        }
        out
    }
}

/// A small spec over the UAV event vocabulary: derived predicates,
/// optionally attested, and one or two `forbidden_k` rules.
pub fn random_spec(seed: u64) -> String {
    Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        derived: Vec::new(),
        fresh: 0,
    }
    .spec()
}
