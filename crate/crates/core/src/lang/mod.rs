//! Attestation Datalog: the property language monitors are generated from.
//!
//! Programs are ordinary stratified Datalog extended with the attestation
//! form `principal attests atom`:
//!
//! ```text
//! 'DO' attests ready_to_fly(Id,T,C) :- 'DO' attests postRequest('/ready_to_fly',Id,T,C).
//! forbidden(Id) :- not exists_booking_before(Id,T,C1), 'DO' attests ready_to_fly(Id,T,C2).
//! ```
//!
//! Processing is three passes: [`parse_spec`], [`check_safety`], [`stratify`].

mod ast;
mod parser;
mod safety;
mod strata;

pub use ast::{Atom, Claim, CmpOp, Literal, Rule, RuleSet, Term, Value};
pub use parser::{parse_ground_atom, parse_spec};
pub use safety::{check_safety, DemandInfo, ValidatedRuleSet};
pub use strata::{stratify, Level, Strata};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LangError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("predicate `{predicate}` used with arity {found}, expected {expected}")]
    Arity {
        predicate: String,
        expected: usize,
        found: usize,
    },
    #[error("unsafe rule {rule}: variable `{variable}` {reason}")]
    UnsafeRule {
        rule: usize,
        variable: String,
        reason: String,
    },
    #[error("program is not stratifiable: negative cycle {}", cycle.join(" -> "))]
    NotStratifiable { cycle: Vec<String> },
}

/// Parse, validate and stratify in one step.
pub fn compile(text: &str) -> Result<Strata, LangError> {
    stratify(check_safety(parse_spec(text)?)?)
}
