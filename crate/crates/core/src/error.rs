use alloc::string::String;

use thiserror::Error;

use crate::tensor::Wire;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("wire {0} appears on both operands")]
    LabelCollision(Wire),

    #[error("wire {0} is not present")]
    UnknownWire(Wire),

    #[error("duplicate wire {0}")]
    DuplicateWire(Wire),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("state is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositive { min_eigenvalue: f64 },

    #[error("operator is not Hermitian (deviation {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("trace {trace} differs from 1")]
    BadTrace { trace: f64 },

    #[error("rank {rank} out of range 1..={dim}")]
    RankOutOfRange { rank: usize, dim: usize },

    #[error("total dimension {dim} exceeds the configured cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("frame operator is singular (lambda_min = {lambda_min:e})")]
    SingularFrame { lambda_min: f64 },

    #[error("not a unitary (deviation {deviation:e})")]
    NotUnitary { deviation: f64 },

    #[error("rejection budget of {tries} exhausted; best achieved chi_min = {best_chi_min}")]
    BudgetExhausted { tries: usize, best_chi_min: f64 },

    #[error("operation requires {expected} mode")]
    ModeMismatch { expected: &'static str },

    #[error("invalid causal order: {0}")]
    InvalidOrder(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no samples")]
    NoSamples,
}

pub type Result<T> = core::result::Result<T, Error>;
