use thiserror::Error;

/// Errors returned by the solver, circuit and readout layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QlbmError {
    /// Unknown lattice name.
    #[error("unknown lattice configuration '{0}'")]
    UnknownLattice(String),

    /// Input vector length does not match what the operation expects.
    #[error("arity mismatch: expected {expected} values, got {got}")]
    Arity { expected: usize, got: usize },

    /// A parameter lies outside its admissible range.
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Grid shapes of two objects disagree, or a dimension is not a power of two.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Model and collision mode cannot be combined.
    #[error("model {model} does not support {mode} collision")]
    ModelMode { model: &'static str, mode: &'static str },

    /// All-zero vector handed to amplitude encoding.
    #[error("cannot normalize a zero vector")]
    ZeroVector,

    /// Post-selection hit a branch of zero probability.
    #[error("post-selection on measurement {index} has zero probability")]
    ZeroProbability { index: usize },

    /// Attempt to invert a circuit containing measurements.
    #[error("circuit contains measurements and cannot be inverted")]
    NotInvertible,

    /// Two circuits with different layouts were combined.
    #[error("register layouts differ")]
    LayoutMismatch,

    /// Register layout exceeds the desk-scale qubit budget.
    #[error("layout needs {0} qubits, more than the supported 30")]
    TooManyQubits(usize),

    /// Numerical routine failed to converge.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    /// Sampling produced nothing usable.
    #[error("no shots survived post-selection")]
    NoKeptShots,

    /// Tomography loss is singular at an observed point.
    #[error("model amplitude vanishes at observed point {0}")]
    SingularPoint(usize),
}

pub type QlbmResult<T> = Result<T, QlbmError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> QlbmError {
    QlbmError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
