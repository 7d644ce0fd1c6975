use thiserror::Error;

use crate::cmdp::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid CMDP: {}", format_violations(.0))]
    InvalidCmdp(Vec<Violation>),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("linear solve failed: {0}")]
    SingularSystem(String),

    #[error("non-finite logit at ({state}, {action})")]
    NonFiniteLogit { state: usize, action: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid mixture weights ({first}, {second}): {reason}")]
    InvalidWeights {
        first: f64,
        second: f64,
        reason: &'static str,
    },

    #[error("degenerate gradient: norm {norm:e} below threshold")]
    DegenerateGradient { norm: f64 },

    #[error("near-collinear gradients: Gram determinant {gram:e} below {threshold:e}")]
    NearCollinear { gram: f64, threshold: f64 },

    #[error("sample budget {budget} below one rollout per pair ({minimum})")]
    BudgetTooSmall { budget: u64, minimum: u64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("LP solver failure: {0}")]
    Lp(String),

    #[error("no reward-optimizing iterations (all weights zero)")]
    NoRewardIterations,

    #[error("policy snapshots missing for iteration {0}; run with snapshot_every = 1")]
    MissingSnapshot(usize),

    #[error("runs were produced on different instances or initializations")]
    MismatchedRuns,

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
