//! Revisioned fact store and stratified semi-naive evaluation.

mod eval;
pub(crate) mod matching;
mod store;

pub use eval::{evaluate, query, rule_instances, EvalReport};
pub use matching::Substitution;
pub use store::{AttestedFact, FactKey, FactStore, GroundAtom};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("fact `{0}` is not ground")]
    NonGroundFact(String),
    #[error("revision {revision} skips ahead of current revision {current}")]
    RevisionRegression { revision: u64, current: u64 },
    #[error("base fact `{0}` has no log provenance")]
    MissingSource(String),
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("integer overflow evaluating `{0}`")]
    ArithmeticOverflow(String),
}
