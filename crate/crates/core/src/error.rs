use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
///
/// Matrix positions are reported 1-based, the same way the CLI prints
/// variables and samples.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("column {0} is constant")]
    ConstantColumn(usize),

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("too few variables: need at least 2, got {0}")]
    TooFewVariables(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular submatrix for pair ({i}, {j}): condition estimate {condition:.3e}")]
    SingularSubmatrix { i: usize, j: usize, condition: f64 },

    #[error("invalid effective size: n_k - |S| - 3 = {0} <= 0")]
    InvalidEffectiveSize(i64),

    #[error("all combination weights are zero")]
    AllZeroWeights,

    #[error("averaging window is empty: {iterations} iterations with burn-in {burn_in}")]
    EmptyWindow { iterations: usize, burn_in: usize },

    #[error("covariance of component {0} is not positive definite")]
    SingularCovariance(usize),

    #[error("cannot keep every cluster at size {min_cluster}: {n} samples for {components} components")]
    EmptyClusterUnrepairable {
        n: usize,
        components: usize,
        min_cluster: usize,
    },

    #[error("did not converge after {0} iterations")]
    NotConverged(usize),

    #[error("band strength {c} gives a precision matrix that is not positive definite at p = {p}")]
    NotPositiveDefinite { c: f64, p: usize },

    #[error("truth adjacency has no edges; precision-recall area is undefined")]
    DegenerateTruth,

    #[error("matrix is singular or not positive definite: {0}")]
    SingularInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
