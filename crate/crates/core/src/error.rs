use std::fmt;

use thiserror::Error;

/// A violated membership predicate together with the amount by which it is violated.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintViolation {
    pub predicate: String,
    pub amount: f64,
}

impl ConstraintViolation {
    pub fn new(predicate: impl Into<String>, amount: f64) -> Self {
        Self {
            predicate: predicate.into(),
            amount,
        }
    }

    /// Keeps whichever of the two violations is larger.
    pub fn worst(a: Option<Self>, b: Option<Self>) -> Option<Self> {
        match (a, b) {
            (Some(a), Some(b)) => Some(if b.amount > a.amount { b } else { a }),
            (a, None) => a,
            (None, b) => b,
        }
    }
}

impl fmt::Display for ConstraintViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (violated by {:.3e})", self.predicate, self.amount)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(ConstraintViolation),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("enumeration budget exceeded: {count} combinations, budget {budget}")]
    BudgetExceeded { count: u128, budget: u128 },

    #[error("initial state is not in the feasible set of the full-horizon problem")]
    InitialInfeasible,

    #[error("certificate failure{}: {reason}", step.map(|k| format!(" at step {k}")).unwrap_or_default())]
    CertificateFailure { step: Option<u64>, reason: String },

    #[error("riccati iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    RiccatiNonConvergence { iterations: usize, residual: f64 },

    #[error("lifted pair is not controllable (rank {rank} < {dim})")]
    NotControllable { rank: usize, dim: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
