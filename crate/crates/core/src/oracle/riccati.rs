use nalgebra::DMatrix;
use serde::Serialize;

use super::joint::{assemble_joint, rs_step_minimizer_penalized};
use super::search::{minimize_affine_risk_with, SearchOptions};
use crate::error::{Error, Result};
use crate::filter::leg_affine;
use crate::linalg::LowerTri;
use crate::model::{GaussianModel, RiskSpec};

/// Largest horizon for which the report runs the brute-force search.
pub const BRUTE_FORCE_MAX_T: usize = 3;

/// Backward recursion `Γ(T,t) = 1 + Γ(T,t+1)/(1 + Γ(T,t+1))`, `Γ(T,T) = 0`,
/// for the random walk observed in unit noise under `Φ = Σ X_t² + (X_t − h_t)²`.
#[derive(Debug, Clone, Serialize)]
pub struct BackwardRiccati {
    pub horizon: usize,
    pub lambda_const: f64,
    /// `Γ(T,t)` at index `t − 1`.
    pub gamma: Vec<f64>,
    /// `2(λ^T − λ^t)/((1 − √5)λ^t − (1 + √5)λ^T)`.
    pub gamma_closed_form: Vec<f64>,
    /// Variant with the denominator powers exchanged and numerator 10:
    /// `10(λ^T − λ^t)/((1 − √5)λ^T − (1 + √5)λ^t)`.
    pub gamma_swapped_form: Vec<f64>,
    pub closed_form_discrepancy: f64,
    pub swapped_form_discrepancy: f64,
}

impl BackwardRiccati {
    /// `1/(1 + Γ(T,t))` for `t = 1..T`.
    pub fn coefficients(&self) -> Vec<f64> {
        self.gamma.iter().map(|g| 1.0 / (1.0 + g)).collect()
    }
}

pub fn backward_riccati(horizon: usize) -> Result<BackwardRiccati> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let mut gamma = vec![0.0; horizon];
    for t in (0..horizon - 1).rev() {
        let next = gamma[t + 1];
        gamma[t] = 1.0 + next / (1.0 + next);
    }
    let sqrt5 = 5f64.sqrt();
    let lambda = (3.0 - sqrt5) / (3.0 + sqrt5);
    let big_t = horizon as i32;
    let closed: Vec<f64> = (1..=big_t)
        .map(|t| {
            let (lt, l_t) = (lambda.powi(big_t), lambda.powi(t));
            2.0 * (lt - l_t) / ((1.0 - sqrt5) * l_t - (1.0 + sqrt5) * lt)
        })
        .collect();
    let swapped: Vec<f64> = (1..=big_t)
        .map(|t| {
            let (lt, l_t) = (lambda.powi(big_t), lambda.powi(t));
            10.0 * (lt - l_t) / ((1.0 - sqrt5) * lt - (1.0 + sqrt5) * l_t)
        })
        .collect();
    let gap = |other: &[f64]| gamma.iter().zip(other).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(BackwardRiccati {
        horizon,
        lambda_const: lambda,
        closed_form_discrepancy: gap(&closed),
        swapped_form_discrepancy: gap(&swapped),
        gamma,
        gamma_closed_form: closed,
        gamma_swapped_form: swapped,
    })
}

/// Coefficients of `Y_1` in the first-step LEG and RS estimates of the example,
/// as stated and as computed by independent routes.
#[derive(Debug, Clone, Serialize)]
pub struct LegVsRsReport {
    pub horizon: usize,
    pub riccati: BackwardRiccati,
    /// Stated RS coefficient, `1/4`.
    pub stated_rs_coefficient: f64,
    /// Stated LEG coefficient, `(1 + Γ(T,1))/(2 + Γ(T,1))`.
    pub stated_leg_coefficient: f64,
    /// LEG filter on the transformed model with `a_t = D_t = 1/(1 + Γ(T,t))`.
    pub transformed_model_leg_coefficient: f64,
    /// LEG filter on the tilted prior `a_t = D_t = 1/(1 + Γ(T+1,t))`.
    pub leg_coefficient: f64,
    /// LEG filter on the prior covariance `(K⁻¹ + I)⁻¹` built by direct inversion.
    pub tilted_prior_leg_coefficient: f64,
    /// Exhaustive search over affine causal filters (only for small horizons).
    pub brute_force_leg_coefficient: Option<f64>,
    /// Exact conditional minimization of the first-step RS criterion.
    pub rs_coefficient: f64,
    pub leg_differs_from_rs: bool,
    pub stated_rs_matches: bool,
    pub stated_leg_matches: bool,
}

impl LegVsRsReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

fn random_walk(horizon: usize) -> Result<GaussianModel> {
    GaussianModel::ar1(&vec![1.0; horizon], &vec![1.0; horizon], 0.0, &vec![1.0; horizon])
}

fn first_gain(model: &GaussianModel, risk: &RiskSpec) -> Result<f64> {
    Ok(*leg_affine(model, risk)?.gain.get(0, 0))
}

/// Runs the comparison for horizon `T ≥ 1`.
pub fn leg_vs_rs_example(horizon: usize) -> Result<LegVsRsReport> {
    leg_vs_rs_example_with(horizon, &SearchOptions::default())
}

pub fn leg_vs_rs_example_with(horizon: usize, options: &SearchOptions) -> Result<LegVsRsReport> {
    let riccati = backward_riccati(horizon)?;
    let shifted = backward_riccati(horizon + 1)?;
    let risk = RiskSpec::scalar(-1.0, vec![1.0; horizon])?;
    let ones = vec![1.0; horizon];

    let stated_coef = riccati.coefficients();
    let stated_model = GaussianModel::ar1(&stated_coef, &stated_coef, 0.0, &ones)?;
    let transformed_model_leg_coefficient = first_gain(&stated_model, &risk)?;

    let coef = shifted.coefficients()[..horizon].to_vec();
    let model = GaussianModel::ar1(&coef, &coef, 0.0, &ones)?;
    let leg_coefficient = first_gain(&model, &risk)?;

    let walk = random_walk(horizon)?;
    let k = walk.signal_cov_matrix();
    let k_inv = k
        .clone()
        .cholesky()
        .ok_or_else(|| Error::FactorizationFailure("random walk covariance".into()))?
        .inverse();
    let tilted = (k_inv + DMatrix::identity(horizon, horizon))
        .cholesky()
        .ok_or_else(|| Error::FactorizationFailure("tilted precision".into()))?
        .inverse();
    let tilted_model = GaussianModel::general(
        vec![0.0; horizon],
        LowerTri::from_fn(horizon, |t, s| tilted[(t, s)]),
        ones.clone(),
    )?;
    let tilted_prior_leg_coefficient = first_gain(&tilted_model, &risk)?;

    let brute_force_leg_coefficient = if horizon <= BRUTE_FORCE_MAX_T {
        let opts = SearchOptions {
            signal_penalty: Some(ones.clone()),
            ..options.clone()
        };
        let opt = minimize_affine_risk_with(&walk, &risk, &opts)?;
        Some(*opt.filter.gain.get(0, 0))
    } else {
        None
    };

    let joint = assemble_joint(&walk)?;
    let rs_coefficient = rs_step_minimizer_penalized(&joint, &[1.0], &risk, &[], 0, Some(&ones))?;

    let g1 = riccati.gamma[0];
    let stated_rs_coefficient = 0.25;
    let stated_leg_coefficient = (1.0 + g1) / (2.0 + g1);
    let tol = 1e-8;
    Ok(LegVsRsReport {
        horizon,
        stated_rs_matches: (stated_rs_coefficient - rs_coefficient).abs() < tol,
        stated_leg_matches: (stated_leg_coefficient - leg_coefficient).abs() < tol,
        leg_differs_from_rs: (leg_coefficient - rs_coefficient).abs() > tol,
        riccati,
        stated_rs_coefficient,
        stated_leg_coefficient,
        transformed_model_leg_coefficient,
        leg_coefficient,
        tilted_prior_leg_coefficient,
        brute_force_leg_coefficient,
        rs_coefficient,
    })
}
