use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{}: {err}", path.display()))
    }
}

impl From<mixggm::Error> for CliError {
    fn from(err: mixggm::Error) -> Self {
        use mixggm::Error::*;
        let msg = err.to_string();
        match err {
            InvalidArgument(_) | EmptyWindow { .. } | NotPositiveDefinite { .. } => CliError::Usage(msg),
            EmptyInput
            | NonFinite { .. }
            | ConstantColumn(_)
            | TooFewSamples { .. }
            | TooFewVariables(_)
            | DimensionMismatch(_)
            | DegenerateTruth
            | EmptyClusterUnrepairable { .. } => CliError::Data(msg),
            SingularSubmatrix { .. }
            | InvalidEffectiveSize(_)
            | AllZeroWeights
            | SingularCovariance(_)
            | NotConverged(_)
            | SingularInput(_) => CliError::Numerical(msg),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
