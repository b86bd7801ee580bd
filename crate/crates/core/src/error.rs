use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("design matrix is rank deficient (estimated condition number of X^T X: {condition:.3e})")]
    RankDeficient { condition: f64 },

    #[error("degenerate residual law at leverage {h}: member variance collapses")]
    DegenerateLaw { h: f64 },

    #[error("{what} did not converge after {iterations} iterations (achieved {achieved:.3e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        achieved: f64,
    },

    #[error("conjugate gradient did not converge after {iterations} iterations (worst relative residual {worst_residual:.3e})")]
    CgNonConvergence {
        iterations: usize,
        worst_residual: f64,
        residuals: Vec<f64>,
        partial: Vec<Vec<f64>>,
    },

    #[error("non-positive curvature p^T A p = {curvature:.3e} encountered in conjugate gradient; increase damping")]
    IndefiniteCurvature { curvature: f64 },

    #[error("Hessian is singular (pivot ratio {ratio:.3e}); add damping")]
    SingularHessian { ratio: f64 },

    #[error("weighted Gram matrix is singular; fitted probabilities are degenerate")]
    SingularWeightedGram,

    #[error("dense computation refused: {size} exceeds the feasibility limit {limit}")]
    FeasibilityGuard { size: usize, limit: usize },

    #[error("vector is not on the probability simplex (sum {sum})")]
    NotASimplex { sum: f64 },

    #[error("alpha grids differ")]
    GridMismatch,

    #[error("zero variance after ranking")]
    ZeroVariance,

    #[error("degenerate Gaussian fit: only {count} observations")]
    DegenerateFit { count: usize },

    #[error("only {survived} shadow models survived training (need at least {required})")]
    TooFewShadows { survived: usize, required: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
