use thiserror::Error;

use crate::mdp::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("infeasible action: {}", join_violations(.0))]
    Infeasible(Vec<Violation>),

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("enumeration budget exceeded: {required} > {budget}")]
    BudgetExceeded { required: u128, budget: u128 },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("instance fingerprint mismatch: snapshot {snapshot}, instance {instance}")]
    Fingerprint { snapshot: String, instance: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
