use thiserror::Error;

/// Failure modes shared by every stage of the pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("operator not stable: {0}")]
    NotStable(String),
    #[error("shifted operator not definite (shift {shift})")]
    NotDefinite { shift: f64 },
    #[error("steady state not found after {iterations} Newton steps (residual {residual:e})")]
    SteadyStateNotFound { iterations: usize, residual: f64 },
    #[error("steady state unstable: linearization has eigenvalue {max_eigenvalue:e} >= 0")]
    SteadyStateUnstable { max_eigenvalue: f64 },
    #[error("spectral condition violated: linearization has eigenvalue {max_eigenvalue:e} >= 0")]
    SpectralCondition { max_eigenvalue: f64 },
    #[error("step size {dt:e} violates stability (max |lambda| = {max_abs_eigenvalue:e})")]
    StepSize { dt: f64, max_abs_eigenvalue: f64 },
    #[error("path {path} diverged")]
    PathDiverged { path: usize },
    #[error("iteration diverged at step {step}")]
    Diverged { step: usize },
}

impl Error {
    /// True for failures caused by an unstable operator or steady state.
    pub fn is_stability(&self) -> bool {
        matches!(
            self,
            Error::NotStable(_)
                | Error::SteadyStateUnstable { .. }
                | Error::SpectralCondition { .. }
        )
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
