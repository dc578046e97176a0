use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate interval: [{t1}, {t2}] snaps to a single grid node")]
    DegenerateInterval { t1: f64, t2: f64 },
    #[error("grid functions live on different grids ({left} vs {right} cells)")]
    GridMismatch { left: usize, right: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("increments are linearly dependent (input {index} dropped by orthonormalization)")]
    DependentIncrements { index: usize },
    #[error("operator is singular on the grid space (sigma_min = {sigma_min:e})")]
    SingularOperator { sigma_min: f64 },
    #[error("invalid operator spec: {0}")]
    InvalidSpec(String),
    #[error("operator kind `{0}` has no declared kernel")]
    UnsupportedSpec(String),
    #[error("eigenvalue clamping exceeded tolerance (relative change {relative_change:e})")]
    FactorizationFailure { relative_change: f64 },
    #[error("smoothing parameter must be positive, got {0}")]
    NonpositiveEps(f64),
    #[error("the delta-separated simplex is empty (k = {k}, delta = {delta}, n = {n})")]
    EmptySimplex { k: usize, delta: f64, n: usize },
    #[error("Gram determinant {det:e} is below the singularity floor")]
    SingularGram { det: f64 },
    #[error("({t1}, {t2}) is a kernel indicator of the operator")]
    KernelIndicator { t1: f64, t2: f64 },
    #[error("({t1}, {t2}) is not a kernel indicator of the operator")]
    NotAKernelIndicator { t1: f64, t2: f64 },
    #[error("indicator difference vanishes at ({t1}, {t2})")]
    DegenerateDifference { t1: f64, t2: f64 },
    #[error("operator violates finite-kernel / invertibility conditions: {0}")]
    ConditionsViolated(String),
    #[error("second moment for k = {k} is expensive; enable it explicitly")]
    ExpensiveMoment { k: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("linear algebra failure: {0}")]
    Numerical(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
