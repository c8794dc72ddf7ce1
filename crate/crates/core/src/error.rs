use thiserror::Error;

use crate::bvp::SolveReport;
use crate::mesh::Location;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure modes of the iterative solvers.
#[derive(Debug, Error)]
pub enum SolveError {
    /// The iteration budget ran out. `best` is the iterate with the smallest
    /// residual seen so far.
    #[error("no convergence after {} iterations (relative residual {:.3e})", .report.iterations, .report.relative_residual)]
    NotConverged { report: SolveReport, best: Vec<f64> },
    /// A search direction with non-positive curvature was found.
    #[error("operator is not positive definite: <p, Ap> = {curvature:.3e} at iteration {iteration}")]
    Indefinite { iteration: usize, curvature: f64 },
    /// The projected residual stopped decreasing while still above tolerance,
    /// which happens when null-space components leak into the iterates.
    #[error("projected residual stalled at {residual:.3e} after {iteration} iterations")]
    Stalled { iteration: usize, residual: f64 },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("expected a field at {expected:?}, found {found:?}")]
    WrongLocation { expected: Location, found: Location },
    #[error("fields live on different grids or locations")]
    GridMismatch,
    #[error("operation requires a periodic grid")]
    NotPeriodic,
    #[error("operation requires a bounded grid")]
    NotBounded,
    #[error("operation requires a 3-D grid")]
    NotThreeDimensional,
    #[error("operation requires a 2-D grid")]
    NotTwoDimensional,
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("coefficient: {0}")]
    Coefficient(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{what} is not resolved: {detail}")]
    Unresolvable { what: &'static str, detail: String },
    #[error("rate fit: {0}")]
    Fit(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Tags an error with the pipeline stage it came from.
    pub fn at(self, stage: impl Into<String>) -> Self {
        Error::Stage { stage: stage.into(), source: Box::new(self) }
    }
}
