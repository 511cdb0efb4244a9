//! Substitutions, term matching and comparison evaluation shared by the
//! bottom-up evaluator and the top-down prover.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use super::store::GroundAtom;
use super::EngineError;
use crate::lang::{Atom, Claim, CmpOp, Term, Value};

pub type Substitution = BTreeMap<String, Value>;

/// Matches one term against a value, extending `subst`.
pub fn match_term(term: &Term, value: &Value, subst: &mut Substitution) -> bool {
    match term {
        Term::Const(c) => c == value,
        Term::Var(v) => match subst.get(v) {
            Some(bound) => bound == value,
            None => {
                subst.insert(v.clone(), value.clone());
                true
            }
        },
        Term::Sum(..) => false,
    }
}

pub fn match_args(terms: &[Term], values: &[Value], subst: &mut Substitution) -> bool {
    terms.len() == values.len() && terms.iter().zip(values).all(|(t, v)| match_term(t, v, subst))
}

/// Matches a claim's principal term against a concrete principal name.
pub fn match_principal(term: Option<&Term>, principal: Option<&str>, subst: &mut Substitution) -> bool {
    match (term, principal) {
        (None, None) => true,
        (Some(t), Some(p)) => match t {
            Term::Const(c) => c.principal_name() == p,
            Term::Var(v) => match subst.get(v) {
                Some(bound) => bound.principal_name() == p,
                None => {
                    subst.insert(v.clone(), Value::Str(p.to_string()));
                    true
                }
            },
            Term::Sum(..) => false,
        },
        _ => false,
    }
}

/// Principal the claim is restricted to under `subst`, if determined.
pub fn resolved_principal(claim: &Claim, subst: &Substitution) -> Option<Option<String>> {
    match &claim.principal {
        None => Some(None),
        Some(Term::Const(c)) => Some(Some(c.principal_name())),
        Some(Term::Var(v)) => subst.get(v).map(|b| Some(b.principal_name())),
        Some(Term::Sum(..)) => None,
    }
}

pub fn ground_atom(atom: &Atom, subst: &Substitution) -> Option<GroundAtom> {
    let args = atom
        .args
        .iter()
        .map(|t| match t {
            Term::Const(c) => Some(c.clone()),
            Term::Var(v) => subst.get(v).cloned(),
            Term::Sum(..) => None,
        })
        .collect::<Option<Vec<_>>>()?;
    Some(GroundAtom {
        predicate: atom.predicate.clone(),
        args,
    })
}

/// Instantiates a claim; `None` if a variable is unbound.
pub fn ground_claim(claim: &Claim, subst: &Substitution) -> Option<(Option<String>, GroundAtom)> {
    let principal = resolved_principal(claim, subst)?;
    Some((principal, ground_atom(&claim.atom, subst)?))
}

fn operand(term: &Term, subst: &Substitution) -> Result<Option<Value>, EngineError> {
    Ok(match term {
        Term::Const(c) => Some(c.clone()),
        Term::Var(v) => subst.get(v).cloned(),
        Term::Sum(v, k) => match subst.get(v) {
            Some(Value::Int(x)) => Some(Value::Int(x.checked_add(*k).ok_or_else(|| {
                EngineError::ArithmeticOverflow(format!("{x} + {k}"))
            })?)),
            _ => None,
        },
    })
}

/// Evaluates a comparison. Unbound operands and ordering comparisons
/// between values of different kinds are false.
pub fn compare(lhs: &Term, op: CmpOp, rhs: &Term, subst: &Substitution) -> Result<bool, EngineError> {
    let (Some(a), Some(b)) = (operand(lhs, subst)?, operand(rhs, subst)?) else {
        return Ok(false);
    };
    let ord = match (&a, &b) {
        (Value::Int(x), Value::Int(y)) => Some(x.cmp(y)),
        (Value::Str(x), Value::Str(y)) | (Value::Sym(x), Value::Sym(y)) => Some(x.cmp(y)),
        _ => None,
    };
    Ok(match op {
        CmpOp::Eq => a == b,
        CmpOp::Ne => a != b,
        CmpOp::Lt => ord == Some(Ordering::Less),
        CmpOp::Le => matches!(ord, Some(Ordering::Less | Ordering::Equal)),
        CmpOp::Gt => ord == Some(Ordering::Greater),
        CmpOp::Ge => matches!(ord, Some(Ordering::Greater | Ordering::Equal)),
    })
}
