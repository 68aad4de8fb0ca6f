use thiserror::Error;

use crate::mdp::Violation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP ({} violation(s)): {}", .0.len(), summarize(.0))]
    InvalidMdp(Vec<Violation>),
    #[error("discount factor {0} must lie strictly between 0 and 1")]
    Discount(f64),
    #[error("span of an empty vector is undefined")]
    EmptyVector,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("risk parameter must be non-zero")]
    ZeroGamma,
    #[error("enumeration needs {0} items, above the 2^24 guard")]
    GuardExceeded(u128),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn summarize(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_discount(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(Error::Discount(beta))
    }
}
