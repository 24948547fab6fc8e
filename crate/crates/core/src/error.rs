use thiserror::Error;

/// Errors raised by tensor kernels and the gradient graph.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid range [{lo}, {hi})")]
    Range { op: &'static str, lo: isize, hi: isize },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{0}")]
    Contract(String),
}

/// Errors raised while building an overlap schedule.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error(
        "schedule overflow at layer {layer}: overlap {overlap} exceeds head dimension {head_dim}"
    )]
    Overflow {
        layer: usize,
        overlap: usize,
        head_dim: usize,
    },
    #[error("cannot parse schedule policy {input:?}; expected \"fixed <k>\", \"fixed half\" or \"<inc|dec>-<0|1> (<x>)\" with x >= 1")]
    Parse { input: String },
    #[error("invalid schedule arguments: {0}")]
    Invalid(String),
}

/// Crate-level error.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
