use thiserror::Error;

pub type Result<T> = std::result::Result<T, QstError>;

/// Errors raised by chain validation and by the analysis routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum QstError {
    #[error("malformed chain spec: {0}")]
    MalformedSpec(String),

    #[error("chain has {states} states, the dense kernels accept at most {max}")]
    TooLarge { states: usize, max: usize },

    #[error("entry P({row},{col}) = {value} is outside [0,1]")]
    EntryOutOfRange { row: String, col: String, value: f64 },

    #[error("row {row} sums to {sum}, expected 1")]
    RowSumViolation { row: String, sum: f64 },

    #[error("target state {state} is not absorbing")]
    NonAbsorbingTarget { state: String },

    #[error("{which} set is empty")]
    EmptyPartition { which: &'static str },

    #[error("restriction to the transient set is not primitive")]
    NotPrimitive,

    #[error("unknown state label {0:?}")]
    UnknownState(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("Perron eigenvalue {0} is not in (0,1) at double precision")]
    LambdaOutOfRange(f64),

    #[error("negative time {0}")]
    NegativeTime(f64),

    #[error("initial measure gives zero gamma-mass to the transient set")]
    ZeroMassOnTransient,

    #[error("initial measure charges target state {state}")]
    SupportOutsideTransient { state: String },

    #[error("shifted time t + delta = {t} + {delta} is negative")]
    NegativeShiftedTime { t: usize, delta: f64 },

    #[error("reference measure vanishes at state {state} (t = {t}) where the chain has mass")]
    SupportViolation { t: usize, state: String },

    #[error("separation increases at t = {t}: {prev} -> {next}")]
    NonMonotoneSeparation { t: usize, prev: f64, next: f64 },

    #[error("sigma/theta recursion broken at t = {t} (deviation {deviation:e})")]
    RecursionMismatch { t: usize, deviation: f64 },

    #[error("horizon too short, {remaining:e} of mass is unresolved")]
    HorizonTooShort { remaining: f64 },

    #[error("unknown model {0:?}")]
    UnknownModel(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Failure classes used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Convergence,
    Invariant,
}

impl QstError {
    pub fn class(&self) -> ErrorClass {
        use QstError::*;
        match self {
            NoConvergence { .. } | LambdaOutOfRange(_) => ErrorClass::Convergence,
            SupportViolation { .. }
            | NonMonotoneSeparation { .. }
            | RecursionMismatch { .. }
            | HorizonTooShort { .. } => ErrorClass::Invariant,
            _ => ErrorClass::Validation,
        }
    }
}
