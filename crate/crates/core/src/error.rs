//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("linear system (I - gamma P) is singular")]
    SingularSystem,

    #[error("adversary remap index {index} out of range for state {state} (|B(s)| = {len})")]
    InvalidRemap {
        state: usize,
        index: usize,
        len: usize,
    },

    #[error("enumeration needs {size} adversaries, budget is {budget}")]
    EnumerationBudget { size: u128, budget: u128 },

    #[error("KL support violation at index {index}: p > 0 but q = 0")]
    SupportViolation { index: usize },

    #[error("perturbation norm {norm} exceeds budget {eps}")]
    BudgetViolated { norm: f64, eps: f64 },

    #[error("invalid horizon {horizon}: gamma^horizon = {tail:e} exceeds 1e-8")]
    InvalidHorizon { horizon: usize, tail: f64 },

    #[error("unsupported policy variant: {0}")]
    UnsupportedPolicy(&'static str),

    #[error("policy needs state embeddings but the MDP has none")]
    MissingEmbeddings,

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("sign structure violated: {0}")]
    SignStructure(String),

    #[error("point {point:?} lies within {min_distance} of the domain boundary")]
    BoundaryProximity { point: Vec<f64>, min_distance: f64 },

    #[error("unknown attack '{0}'")]
    UnknownAttack(String),

    #[error("KL divergence {kl} exceeds the small-perturbation guard {guard}")]
    KlGuard { kl: f64, guard: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
