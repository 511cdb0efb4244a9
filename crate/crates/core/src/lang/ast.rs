//! Syntax tree for attestation Datalog programs.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// A ground value: what variables bind to and what facts are made of.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Value {
    Sym(String),
    Int(i64),
    Str(String),
}

impl Value {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    /// Textual content used when a value names a principal.
    pub fn principal_name(&self) -> String {
        match self {
            Value::Sym(s) | Value::Str(s) => s.clone(),
            Value::Int(i) => i.to_string(),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Sym(s) => f.write_str(s),
            Value::Int(i) => write!(f, "{i}"),
            Value::Str(s) => write_quoted(f, s),
        }
    }
}

// Strings have no escape syntax; pick a quote the content does not contain.
fn write_quoted(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    if s.contains('\'') {
        write!(f, "\"{s}\"")
    } else {
        write!(f, "'{s}'")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Var(String),
    Const(Value),
    /// `Var + offset`; only legal as a comparison operand.
    Sum(String, i64),
}

impl Term {
    pub fn sym(s: &str) -> Self {
        Term::Const(Value::Sym(s.to_string()))
    }
    pub fn int(i: i64) -> Self {
        Term::Const(Value::Int(i))
    }
    pub fn str(s: &str) -> Self {
        Term::Const(Value::Str(s.to_string()))
    }
    pub fn var(s: &str) -> Self {
        Term::Var(s.to_string())
    }

    pub fn var_name(&self) -> Option<&str> {
        match self {
            Term::Var(v) | Term::Sum(v, _) => Some(v),
            Term::Const(_) => None,
        }
    }

    pub fn as_const(&self) -> Option<&Value> {
        match self {
            Term::Const(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => f.write_str(v),
            Term::Const(c) => c.fmt(f),
            Term::Sum(v, k) => write!(f, "{v} + {k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(predicate: &str, args: Vec<Term>) -> Self {
        Atom {
            predicate: predicate.to_string(),
            args,
        }
    }

    pub fn is_ground(&self) -> bool {
        self.args.iter().all(|t| matches!(t, Term::Const(_)))
    }

    pub fn vars(&self) -> impl Iterator<Item = &str> {
        self.args.iter().filter_map(Term::var_name)
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.predicate)?;
        if !self.args.is_empty() {
            f.write_str("(")?;
            for (i, a) in self.args.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                a.fmt(f)?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

/// An atom, optionally bound to the principal attesting it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Claim {
    pub principal: Option<Term>,
    pub atom: Atom,
}

impl Claim {
    pub fn plain(atom: Atom) -> Self {
        Claim {
            principal: None,
            atom,
        }
    }

    pub fn attested(principal: Term, atom: Atom) -> Self {
        Claim {
            principal: Some(principal),
            atom,
        }
    }

    pub fn predicate(&self) -> &str {
        &self.atom.predicate
    }

    pub fn is_ground(&self) -> bool {
        self.atom.is_ground() && !matches!(self.principal, Some(Term::Var(_)) | Some(Term::Sum(..)))
    }

    pub fn vars(&self) -> impl Iterator<Item = &str> {
        self.principal
            .iter()
            .filter_map(Term::var_name)
            .chain(self.atom.vars())
    }
}

impl fmt::Display for Claim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = &self.principal {
            write!(f, "{p} attests ")?;
        }
        self.atom.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ne,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Literal {
    Pos(Claim),
    Neg(Claim),
    Cmp(Term, CmpOp, Term),
}

impl Literal {
    pub fn claim(&self) -> Option<&Claim> {
        match self {
            Literal::Pos(c) | Literal::Neg(c) => Some(c),
            Literal::Cmp(..) => None,
        }
    }

    pub fn vars(&self) -> Vec<&str> {
        match self {
            Literal::Pos(c) | Literal::Neg(c) => c.vars().collect(),
            Literal::Cmp(l, _, r) => l.var_name().into_iter().chain(r.var_name()).collect(),
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Pos(c) => c.fmt(f),
            Literal::Neg(c) => write!(f, "not {c}"),
            Literal::Cmp(l, op, r) => write!(f, "{l} {} {r}", op.symbol()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rule {
    pub id: usize,
    pub head: Claim,
    pub body: Vec<Literal>,
}

impl Rule {
    /// Variables bound by positive body literals.
    pub fn positive_vars(&self) -> BTreeSet<&str> {
        self.body
            .iter()
            .filter_map(|l| match l {
                Literal::Pos(c) => Some(c.vars()),
                _ => None,
            })
            .flatten()
            .collect()
    }

    pub fn has_negation(&self) -> bool {
        self.body.iter().any(|l| matches!(l, Literal::Neg(_)))
    }

    pub fn body_predicates(&self) -> impl Iterator<Item = (&str, bool)> {
        self.body.iter().filter_map(|l| match l {
            Literal::Pos(c) => Some((c.predicate(), true)),
            Literal::Neg(c) => Some((c.predicate(), false)),
            Literal::Cmp(..) => None,
        })
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} :- ", self.head)?;
        for (i, l) in self.body.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            l.fmt(f)?;
        }
        f.write_str(".")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
    /// Ground claims declared directly in the program text.
    pub facts: Vec<Claim>,
}

impl RuleSet {
    /// Predicates defined by some rule head.
    pub fn derived_predicates(&self) -> BTreeSet<&str> {
        self.rules.iter().map(|r| r.head.predicate()).collect()
    }

    pub fn rule(&self, id: usize) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }

    /// Program text that parses back to an equal rule set (ids excepted).
    pub fn to_source(&self) -> String {
        let mut out = String::new();
        for fact in &self.facts {
            out.push_str(&format!("{fact}.\n"));
        }
        for rule in &self.rules {
            out.push_str(&format!("{rule}\n"));
        }
        out
    }
}

impl fmt::Display for RuleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_source())
    }
}
