use std::fmt;

use thiserror::Error;

/// Which clause of the feasibility condition failed at a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    /// The one-step variance `γ̄_t` went negative (not PSD in the matrix case).
    NegativeVariance,
    /// `1 + S_t γ̄_t` is not strictly positive.
    NonPositiveDenominator,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NegativeVariance => write!(f, "γ̄_t ≥ 0"),
            Violation::NonPositiveDenominator => write!(f, "1 + S_t·γ̄_t > 0"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("covariance is not positive semidefinite (worst eigenvalue {worst_eigenvalue:e})")]
    NotPositiveSemidefinite { worst_eigenvalue: f64 },

    #[error("negative variance {value} at step {step}")]
    NegativeVariance { step: usize, value: f64 },

    #[error("factorization failed: {0}")]
    FactorizationFailure(String),

    /// `step` is 1-based.
    #[error("feasibility condition violated at step t={step}: {clause} fails (value {value:e})")]
    InfeasibleCondition {
        step: usize,
        clause: Violation,
        value: f64,
    },

    #[error("singular innovation matrix at step t={step} (condition number {condition:e})")]
    SingularInnovationMatrix { step: usize, condition: f64 },

    #[error("recursions disagree at step t={step} (discrepancy {discrepancy:e})")]
    InconsistentRecursion { step: usize, discrepancy: f64 },

    #[error("singular conditioning block (condition number {condition:e})")]
    SingularConditioning { condition: f64 },

    #[error("exponential-quadratic transform diverges (min eigenvalue {min_eigenvalue:e})")]
    TransformDiverges { min_eigenvalue: f64 },

    #[error("pattern search did not converge after {evaluations} evaluations")]
    NoConvergence { evaluations: usize },

    #[error("{overflow_paths} of {n_paths} paths exceed the exponent cap")]
    OverflowDominated { overflow_paths: usize, n_paths: usize },

    #[error("information-state density degenerates at step t={step} (variance {variance:e})")]
    DegenerateDensity { step: usize, variance: f64 },

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors that signal numerical infeasibility of the problem
    /// rather than malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::InfeasibleCondition { .. }
                | Error::SingularInnovationMatrix { .. }
                | Error::SingularConditioning { .. }
                | Error::TransformDiverges { .. }
                | Error::NoConvergence { .. }
                | Error::OverflowDominated { .. }
                | Error::InconsistentRecursion { .. }
                | Error::DegenerateDensity { .. }
                | Error::FactorizationFailure(_)
        )
    }
}
