use thiserror::Error;

use crate::config::ConfigError;
use crate::data::DataError;
use crate::forecaster::ModelIoError;
use crate::glm::GlmError;
use crate::kernel::KernelError;
use crate::kpca::KpcaError;
use crate::selection::SelectionError;
use crate::stepwise::StepwiseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Umbrella error for pipeline-level code and the command line.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Kpca(#[from] KpcaError),
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Stepwise(#[from] StepwiseError),
    #[error(transparent)]
    ModelIo(#[from] ModelIoError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse failure classes used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureClass {
    Validation,
    Numerical,
    NoAdmissibleCandidate,
}

impl FailureClass {
    pub fn exit_code(self) -> i32 {
        match self {
            FailureClass::Validation => 1,
            FailureClass::Numerical => 2,
            FailureClass::NoAdmissibleCandidate => 3,
        }
    }
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn class(&self) -> FailureClass {
        match self {
            Error::Kernel(KernelError::NonFinite { .. }) => FailureClass::Validation,
            Error::Kernel(KernelError::DimensionMismatch { .. }) => FailureClass::Validation,
            Error::Kernel(KernelError::InvalidSpec(_)) => FailureClass::Validation,
            Error::Kpca(KpcaError::InvalidRho(_)) => FailureClass::Validation,
            Error::Glm(g) | Error::Stepwise(StepwiseError::Glm(g)) => glm_class(g),
            Error::Stepwise(StepwiseError::Data(_))
            | Error::Stepwise(StepwiseError::ColumnMismatch { .. })
            | Error::Stepwise(StepwiseError::TooFewCases { .. }) => FailureClass::Validation,
            Error::Selection(SelectionError::InvalidGrid(_)) => FailureClass::Validation,
            Error::Kernel(_) | Error::Kpca(_) | Error::Stepwise(_) => FailureClass::Numerical,
            Error::Selection(SelectionError::NoAdmissibleCandidate { .. }) => {
                FailureClass::NoAdmissibleCandidate
            }
            Error::Selection(_) => FailureClass::Numerical,
            Error::Data(_)
            | Error::ModelIo(_)
            | Error::Config(_)
            | Error::Io { .. }
            | Error::Csv(_) => FailureClass::Validation,
        }
    }
}

/// Malformed inputs are the caller's fault; the rest are numerical.
fn glm_class(e: &GlmError) -> FailureClass {
    match e {
        GlmError::InvalidCosts(_)
        | GlmError::InvalidWeights
        | GlmError::NotBinary
        | GlmError::SingleClass
        | GlmError::DimensionMismatch { .. } => FailureClass::Validation,
        _ => FailureClass::Numerical,
    }
}
