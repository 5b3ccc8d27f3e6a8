//! Exact joint-Gaussian ground truth: conditioning, exponential-quadratic
//! expectations, the auxiliary observation system, brute-force affine risk
//! minimization and the backward Riccati example.

mod augmented;
mod joint;
mod quadrature;
mod riccati;
mod search;

pub use augmented::{augmented_system, AugmentedSystem, AuxMoments, ObsMoments};
pub use joint::{
    assemble_joint, conditional_exp_quadratic, log_conditional_exp_quadratic, log_exp_quadratic,
    rs_step_minimizer, rs_step_minimizer_penalized, JointGaussian, Label, QuadraticForm, DEGENERATE_TOL,
};
pub use quadrature::gauss_hermite;
pub use riccati::{backward_riccati, leg_vs_rs_example, leg_vs_rs_example_with, BackwardRiccati, LegVsRsReport, BRUTE_FORCE_MAX_T};
pub use search::{
    affine_risk, minimize_affine_risk, minimize_affine_risk_with, pattern_search, risk_neutral_start, AffineOptimum,
    AffineRiskProblem, SearchOptions,
};
