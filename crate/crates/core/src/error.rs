use thiserror::Error;

/// Errors raised while building walks, applying operators or integrating flows.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("node {node} is isolated (total weight 0)")]
    IsolatedNode { node: String },

    #[error("negative weight {weight} on edge ({x}, {y})")]
    NegativeWeight { x: String, y: String, weight: f64 },

    #[error("row {row} sums to {sum}, expected 1 (tolerance {tol:e})")]
    NotStochastic { row: usize, sum: f64, tol: f64 },

    #[error("no strictly positive stationary measure found: {reason}")]
    NoStationaryMeasure { reason: String },

    #[error("measure is not invariant: residual {residual:e} exceeds {tol:e}")]
    NotInvariant { residual: f64, tol: f64 },

    #[error("walk is not reversible: residual {residual:e} exceeds {tol:e}")]
    NotReversible { residual: f64, tol: f64 },

    #[error("walk is not connected ({components} components)")]
    Disconnected { components: usize },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty node set")]
    EmptySet,

    #[error("field is not mean-zero: weighted mean {mean:e}")]
    NonzeroMean { mean: f64 },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error(
        "mass window violated at t = {time}: mass {mass} is not strictly inside ({lower}, {upper})"
    )]
    MassWindow {
        time: f64,
        mass: f64,
        lower: f64,
        upper: f64,
    },

    #[error("state leaves the domain of the potential at node {node} (value {value})")]
    OutOfDomain { node: usize, value: f64 },

    #[error("Picard sweep is not contracting (change ratio {ratio:.3}); use a shorter window or a smaller tau")]
    NotContracting { ratio: f64 },

    #[error("step {step} (t = {time}): {source}")]
    Step {
        step: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn at_step(self, step: usize, time: f64) -> Self {
        Error::Step {
            step,
            time,
            source: Box::new(self),
        }
    }

    /// Best residual carried by a solver failure, looking through step wrappers.
    pub fn residual(&self) -> Option<f64> {
        match self {
            Error::NoConvergence { residual, .. } => Some(*residual),
            Error::Step { source, .. } => source.residual(),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
