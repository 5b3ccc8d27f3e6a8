//! Riccati–Volterra recursions for the one-step covariance table `γ̄(t, s)`.
//!
//! Scalar form, for `1 <= s <= t`:
//!
//! ```text
//! γ̄(t, s) = K(t, s) − Σ_{l<s} γ̄(t, l) γ̄(s, l) S_l / (1 + S_l γ̄_l),   S_l = A_l² − μ Q_l
//! ```
//!
//! Columns are filled in increasing `s`, so every `γ̄(s, l)` and `γ̄_l` a
//! column needs is already known. Feasibility (`γ̄_t ≥ 0` and
//! `1 + S_t γ̄_t > 0`) is checked on each diagonal entry; the first failure
//! stops the fill and is recorded, never clamped.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result, Violation};
use crate::linalg::{guarded_solve, mat_rows, min_eigenvalue, psd_sqrt, LowerTri};
use crate::model::{GaussianModel, RiskSpec};

/// Tolerance on the strict feasibility inequalities.
pub const FEAS_TOL: f64 = 1e-12;

/// Step and clause of the first feasibility failure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ViolationInfo {
    /// 1-based step.
    pub step: usize,
    pub clause: Violation,
    pub value: f64,
}

impl ViolationInfo {
    pub fn to_error(self) -> Error {
        Error::InfeasibleCondition {
            step: self.step,
            clause: self.clause,
            value: self.value,
        }
    }
}

/// Scalar solution table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolterraSolution {
    pub mu: f64,
    pub gamma_bar: LowerTri<f64>,
    pub diag: Vec<f64>,
    #[serde(rename = "S")]
    pub s: Vec<f64>,
    pub feasible: bool,
    pub first_violation: Option<usize>,
    pub violation: Option<ViolationInfo>,
}

impl VolterraSolution {
    pub fn horizon(&self) -> usize {
        self.diag.len()
    }

    /// Errors with [`Error::InfeasibleCondition`] unless the solution is feasible.
    pub fn require_feasible(&self) -> Result<&Self> {
        match self.violation {
            Some(v) => Err(v.to_error()),
            None => Ok(self),
        }
    }

    /// `γ̄(t, s)` for `s <= t` (0-based).
    pub fn get(&self, t: usize, s: usize) -> f64 {
        *self.gamma_bar.get(t, s)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("solution serializes")
    }
}

fn scalar_violation(step: usize, gamma: f64, s: f64) -> Option<ViolationInfo> {
    if !(gamma >= -FEAS_TOL) {
        return Some(ViolationInfo {
            step: step + 1,
            clause: Violation::NegativeVariance,
            value: gamma,
        });
    }
    let denom = 1.0 + s * gamma;
    if !(denom > FEAS_TOL) {
        return Some(ViolationInfo {
            step: step + 1,
            clause: Violation::NonPositiveDenominator,
            value: denom,
        });
    }
    None
}

/// Scalar Riccati–Volterra solve. Infeasibility is reported in the result.
pub fn solve_volterra(model: &GaussianModel, risk: &RiskSpec) -> Result<VolterraSolution> {
    risk.check_model(model)?;
    let (_, k, a) = model.scalar_parts()?;
    Ok(solve_scalar_kernel(&k, &risk.s_scalar(&a), risk.mu()))
}

/// Core scalar recursion on a kernel and `S` sequence.
pub fn solve_scalar_kernel(k: &LowerTri<f64>, s: &[f64], mu: f64) -> VolterraSolution {
    let horizon = k.horizon();
    let mut g = LowerTri::filled(horizon, 0.0);
    let mut w = vec![0.0; horizon];
    let mut violation = None;
    for col in 0..horizon {
        for t in col..horizon {
            let mut v = *k.get(t, col);
            for l in 0..col {
                v -= g.get(t, l) * w[l] * g.get(col, l);
            }
            g.set(t, col, v);
        }
        let diag = *g.get(col, col);
        if let Some(info) = scalar_violation(col, diag, s[col]) {
            violation = Some(info);
            break;
        }
        w[col] = s[col] / (1.0 + s[col] * diag);
    }
    let diag = (0..horizon).map(|t| *g.get(t, t)).collect();
    VolterraSolution {
        mu,
        gamma_bar: g,
        diag,
        s: s.to_vec(),
        feasible: violation.is_none(),
        first_violation: violation.map(|v| v.step),
        violation,
    }
}

/// Sufficient condition `A_t² − μ Q_t ≥ 0` for every `t`; advisory only.
pub fn sufficient_condition(gains: &[f64], risk: &RiskSpec) -> bool {
    risk.s_scalar(gains).iter().all(|&s| s >= 0.0)
}

/// Block solution for vector models.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixVolterraSolution {
    pub mu: f64,
    pub gamma_bar: LowerTri<DMatrix<f64>>,
    pub diag: Vec<DMatrix<f64>>,
    /// `A_lᵀ A_l − μ Q_l`.
    pub s: Vec<DMatrix<f64>>,
    pub feasible: bool,
    pub first_violation: Option<usize>,
    pub violation: Option<ViolationInfo>,
}

#[derive(Serialize)]
struct MatrixJson {
    mu: f64,
    gamma_bar: Vec<Vec<Vec<Vec<f64>>>>,
    diag: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "S")]
    s: Vec<Vec<Vec<f64>>>,
    feasible: bool,
    first_violation: Option<usize>,
    violation: Option<ViolationInfo>,
}

impl MatrixVolterraSolution {
    pub fn horizon(&self) -> usize {
        self.diag.len()
    }

    pub fn require_feasible(&self) -> Result<&Self> {
        match self.violation {
            Some(v) => Err(v.to_error()),
            None => Ok(self),
        }
    }

    pub fn get(&self, t: usize, s: usize) -> &DMatrix<f64> {
        self.gamma_bar.get(t, s)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let j = MatrixJson {
            mu: self.mu,
            gamma_bar: self.gamma_bar.rows().iter().map(|r| r.iter().map(mat_rows).collect()).collect(),
            diag: self.diag.iter().map(mat_rows).collect(),
            s: self.s.iter().map(mat_rows).collect(),
            feasible: self.feasible,
            first_violation: self.first_violation,
            violation: self.violation,
        };
        serde_json::to_value(j).expect("solution serializes")
    }

    /// Scalar view of a `1 x 1` block solution.
    pub fn to_scalar(&self) -> Option<VolterraSolution> {
        if self.diag.first().map(|d| d.shape()) != Some((1, 1)) {
            return None;
        }
        Some(VolterraSolution {
            mu: self.mu,
            gamma_bar: self.gamma_bar.map(|b| b[(0, 0)]),
            diag: self.diag.iter().map(|d| d[(0, 0)]).collect(),
            s: self.s.iter().map(|d| d[(0, 0)]).collect(),
            feasible: self.feasible,
            first_violation: self.first_violation,
            violation: self.violation,
        })
    }
}

/// Matrix feasibility: `γ̄_l` PSD and `I + γ̄_l^{1/2} S_l γ̄_l^{1/2}` positive definite.
fn matrix_violation(step: usize, gamma: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<ViolationInfo> {
    let worst = min_eigenvalue(gamma);
    if !(worst >= -FEAS_TOL) {
        return Some(ViolationInfo {
            step: step + 1,
            clause: Violation::NegativeVariance,
            value: worst,
        });
    }
    let root = psd_sqrt(gamma);
    let n = gamma.nrows();
    let inner = DMatrix::identity(n, n) + &root * s * &root;
    let worst = min_eigenvalue(&inner);
    if !(worst > FEAS_TOL) {
        return Some(ViolationInfo {
            step: step + 1,
            clause: Violation::NonPositiveDenominator,
            value: worst,
        });
    }
    None
}

/// Block recursion `γ̄(t, s) = K(t, s) − Σ_{l<s} γ̄(t, l) W_l γ̄(s, l)ᵀ` with
/// `W_l = (I + S_l γ̄_l)^{-1} S_l`, for models without signal/noise correlation.
pub fn solve_volterra_matrix(model: &GaussianModel, risk: &RiskSpec) -> Result<MatrixVolterraSolution> {
    risk.check_model(model)?;
    if model.cross_cov().is_some() {
        return Err(Error::InvalidArgument(
            "correlated models need solve_volterra_correlated".into(),
        ));
    }
    let horizon = model.horizon();
    let n = model.signal_dim();
    let s_mats = risk.s_matrix(model);
    let mut g = LowerTri::filled(horizon, DMatrix::zeros(n, n));
    let mut w: Vec<DMatrix<f64>> = Vec::with_capacity(horizon);
    let mut violation = None;
    for col in 0..horizon {
        for t in col..horizon {
            let mut v = model.cov().get(t, col).clone();
            for l in 0..col {
                v -= (g.get(t, l) * &w[l]) * g.get(col, l).transpose();
            }
            g.set(t, col, v);
        }
        let diag = g.get(col, col).clone();
        if let Some(info) = matrix_violation(col, &diag, &s_mats[col]) {
            violation = Some(info);
            break;
        }
        let lhs = DMatrix::identity(n, n) + &s_mats[col] * &diag;
        let wl = guarded_solve(&lhs, &s_mats[col]).map_err(|condition| Error::SingularInnovationMatrix {
            step: col + 1,
            condition,
        })?;
        w.push(wl);
    }
    Ok(finish_matrix(risk.mu(), g, s_mats, violation))
}

fn finish_matrix(
    mu: f64,
    g: LowerTri<DMatrix<f64>>,
    s: Vec<DMatrix<f64>>,
    violation: Option<ViolationInfo>,
) -> MatrixVolterraSolution {
    let diag = (0..g.horizon()).map(|t| g.get(t, t).clone()).collect();
    MatrixVolterraSolution {
        mu,
        gamma_bar: g,
        diag,
        s,
        feasible: violation.is_none(),
        first_violation: violation.map(|v| v.step),
        violation,
    }
}

/// Per-step matrices of the two-stage update: first the observation `Y_l`,
/// then the auxiliary risk observation with weight `q_l = −μ Q_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTerms {
    /// Innovation covariance `I + A γ̄_l Aᵀ + A K_Xε(l,l) + K_Xε(l,l)ᵀ Aᵀ` (`m x m`).
    pub innovation: DMatrix<f64>,
    /// `γ̄_l` after the `Y_l` update.
    pub post_obs: DMatrix<f64>,
    /// `q_l (I + P_l q_l)^{-1}`.
    pub risk_gain: DMatrix<f64>,
}

/// Cross term `G_{t,l} = γ̄(t, l) A_lᵀ + K_Xε(t, l)`.
pub fn obs_cross(model: &GaussianModel, gamma_tl: &DMatrix<f64>, t: usize, l: usize) -> DMatrix<f64> {
    gamma_tl * model.gains()[l].transpose() + model.cross_block(t, l)
}

/// Solves `v x = b` with the innovation guard.
pub(crate) fn innovation_solve(v: &DMatrix<f64>, b: &DMatrix<f64>, step: usize) -> Result<DMatrix<f64>> {
    guarded_solve(v, b).map_err(|condition| Error::SingularInnovationMatrix {
        step: step + 1,
        condition,
    })
}

pub(crate) fn stage_terms(
    model: &GaussianModel,
    risk: &RiskSpec,
    gamma_ll: &DMatrix<f64>,
    l: usize,
) -> Result<StageTerms> {
    let n = model.signal_dim();
    let m = model.obs_dim();
    let a = &model.gains()[l];
    let kxe = model.cross_block(l, l);
    let innovation = DMatrix::identity(m, m) + a * gamma_ll * a.transpose() + a * &kxe + kxe.transpose() * a.transpose();
    let g_ll = obs_cross(model, gamma_ll, l, l);
    let post_obs = gamma_ll - &g_ll * innovation_solve(&innovation, &g_ll.transpose(), l)?;
    let q = risk.weight(l) * (-risk.mu());
    let risk_gain = guarded_solve(&(DMatrix::identity(n, n) + &q * &post_obs), &q).map_err(|condition| {
        Error::SingularInnovationMatrix {
            step: l + 1,
            condition,
        }
    })?;
    Ok(StageTerms {
        innovation,
        post_obs,
        risk_gain,
    })
}

/// Correlated-noise recursion: for `s <= t`,
///
/// ```text
/// γ̄(t, s) = K(t, s) − Σ_{l<s} [ G_{t,l} V_l^{-1} G_{s,l}ᵀ + γ̄'(t, l) W_l γ̄'(s, l)ᵀ ]
/// ```
///
/// with `G_{t,l} = γ̄(t,l)A_lᵀ + K_Xε(t,l)`, innovation covariance `V_l`,
/// post-observation table `γ̄'(t,l) = γ̄(t,l) − G_{t,l} V_l^{-1} G_{l,l}ᵀ` and
/// `W_l = q_l (I + γ̄'_l q_l)^{-1}`, `q_l = −μ Q_l`. Works for singular `Q`.
pub fn solve_volterra_correlated(model: &GaussianModel, risk: &RiskSpec) -> Result<MatrixVolterraSolution> {
    risk.check_model(model)?;
    let horizon = model.horizon();
    let n = model.signal_dim();
    let s_mats = risk.s_matrix(model);
    let mut g = LowerTri::filled(horizon, DMatrix::zeros(n, n));
    // Per l: V_l^{-1} G_{·,l}ᵀ pieces are formed on the fly from these.
    let mut stages: Vec<StageTerms> = Vec::with_capacity(horizon);
    let mut violation = None;
    for col in 0..horizon {
        // G_{col,l} and γ̄'(col,l) for all l < col, reused across t.
        let mut g_col = Vec::with_capacity(col);
        let mut post_col = Vec::with_capacity(col);
        for l in 0..col {
            let gl = obs_cross(model, g.get(col, l), col, l);
            let g_ll = obs_cross(model, g.get(l, l), l, l);
            let vinv_gll = innovation_solve(&stages[l].innovation, &g_ll.transpose(), l)?;
            post_col.push(g.get(col, l) - &gl * &vinv_gll);
            g_col.push(innovation_solve(&stages[l].innovation, &gl.transpose(), l)?);
        }
        for t in col..horizon {
            let mut v = model.cov().get(t, col).clone();
            for l in 0..col {
                let gtl = obs_cross(model, g.get(t, l), t, l);
                let g_ll = obs_cross(model, g.get(l, l), l, l);
                let vinv_gll = innovation_solve(&stages[l].innovation, &g_ll.transpose(), l)?;
                let post_tl = g.get(t, l) - &gtl * &vinv_gll;
                v -= &gtl * &g_col[l];
                v -= (&post_tl * &stages[l].risk_gain) * post_col[l].transpose();
            }
            g.set(t, col, v);
        }
        let diag = g.get(col, col).clone();
        if let Some(info) = correlated_violation(model, risk, col, &diag)? {
            violation = Some(info);
            break;
        }
        stages.push(stage_terms(model, risk, &diag, col)?);
    }
    Ok(finish_matrix(risk.mu(), g, s_mats, violation))
}

fn correlated_violation(
    model: &GaussianModel,
    risk: &RiskSpec,
    step: usize,
    gamma: &DMatrix<f64>,
) -> Result<Option<ViolationInfo>> {
    let worst = min_eigenvalue(gamma);
    if !(worst >= -FEAS_TOL) {
        return Ok(Some(ViolationInfo {
            step: step + 1,
            clause: Violation::NegativeVariance,
            value: worst,
        }));
    }
    let a = &model.gains()[step];
    let kxe = model.cross_block(step, step);
    let m = model.obs_dim();
    let innovation = DMatrix::identity(m, m) + a * gamma * a.transpose() + a * &kxe + kxe.transpose() * a.transpose();
    let worst_v = min_eigenvalue(&innovation);
    if !(worst_v > FEAS_TOL) {
        return Ok(Some(ViolationInfo {
            step: step + 1,
            clause: Violation::NonPositiveDenominator,
            value: worst_v,
        }));
    }
    let g_ll = obs_cross(model, gamma, step, step);
    let post = gamma - &g_ll * innovation_solve(&innovation, &g_ll.transpose(), step)?;
    let root = psd_sqrt(&post);
    let q = risk.weight(step) * (-risk.mu());
    let n = model.signal_dim();
    let inner = DMatrix::identity(n, n) + &root * q * &root;
    let worst = min_eigenvalue(&inner);
    if !(worst > FEAS_TOL) {
        return Ok(Some(ViolationInfo {
            step: step + 1,
            clause: Violation::NonPositiveDenominator,
            value: worst,
        }));
    }
    Ok(None)
}

/// Dispatches to the scalar, block or correlated solver and returns blocks.
pub fn solve_any(model: &GaussianModel, risk: &RiskSpec) -> Result<MatrixVolterraSolution> {
    if model.cross_cov().is_some() {
        solve_volterra_correlated(model, risk)
    } else {
        solve_volterra_matrix(model, risk)
    }
}

fn check_lengths(what: &str, expected: usize, lens: &[usize]) -> Result<()> {
    if lens.iter().any(|&l| l != expected) {
        return Err(Error::DimensionMismatch(format!(
            "{what}: all sequences must have length {expected}"
        )));
    }
    Ok(())
}

/// AR(1) diagonal: `γ̄_s = D_s + a_s² γ̄_{s−1} / (1 + S_{s−1} γ̄_{s−1})`, `γ̄_0 = 0`.
pub fn ar1_riccati(a: &[f64], d: &[f64], gains: &[f64], q: &[f64], mu: f64) -> Result<Vec<f64>> {
    let horizon = a.len();
    check_lengths("ar1_riccati", horizon, &[d.len(), gains.len(), q.len()])?;
    let mut out = Vec::with_capacity(horizon);
    let mut prev: f64 = 0.0;
    let mut prev_s = 0.0;
    for t in 0..horizon {
        let g = if t == 0 {
            d[0]
        } else {
            d[t] + a[t] * a[t] * prev / (1.0 + prev_s * prev)
        };
        let s = gains[t] * gains[t] - mu * q[t];
        if let Some(info) = scalar_violation(t, g, s) {
            return Err(info.to_error());
        }
        out.push(g);
        prev = g;
        prev_s = s;
    }
    Ok(out)
}

/// MA(1) diagonal: `γ̄_1 = 1 + λ²`, `γ̄_t = 1 + λ² − λ² S_{t−1} / (1 + S_{t−1} γ̄_{t−1})`.
pub fn ma1_gamma(lambda: f64, gains: &[f64], q: &[f64], mu: f64) -> Result<Vec<f64>> {
    let horizon = gains.len();
    check_lengths("ma1_gamma", horizon, &[q.len()])?;
    let base = 1.0 + lambda * lambda;
    let mut out = Vec::with_capacity(horizon);
    let mut prev = 0.0;
    let mut prev_s = 0.0;
    for t in 0..horizon {
        let g = if t == 0 {
            base
        } else {
            base - lambda * lambda * prev_s / (1.0 + prev_s * prev)
        };
        let s = gains[t] * gains[t] - mu * q[t];
        if let Some(info) = scalar_violation(t, g, s) {
            return Err(info.to_error());
        }
        out.push(g);
        prev = g;
        prev_s = s;
    }
    Ok(out)
}

/// Markov-form recursion for the AR(1)-signal / AR(1)-noise preset with
/// state `(X_t, ε_{t−1})`: `γ̄_1 = diag(D_1, 0)` and
/// `γ̄_t = F̃_t P_{t−1} F̃_tᵀ + diag(D_t, 0)` where `F̃_t = diag(a_t, b) − c A_{t−1}`,
/// `c = (0, 1)ᵀ` and `P = γ̄ (I + S γ̄)^{-1}`.
pub fn ar1_noise_riccati(
    a: &[f64],
    d: &[f64],
    alpha: &[f64],
    b: f64,
    q: &[f64],
    mu: f64,
) -> Result<Vec<DMatrix<f64>>> {
    let horizon = a.len();
    check_lengths("ar1_noise_riccati", horizon, &[d.len(), alpha.len(), q.len()])?;
    let mut out: Vec<DMatrix<f64>> = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mut g = DMatrix::zeros(2, 2);
        g[(0, 0)] = d[t];
        if t > 0 {
            let prev = &out[t - 1];
            let gain = DMatrix::from_row_slice(1, 2, &[alpha[t - 1], b]);
            let mut s = gain.transpose() * &gain;
            s[(0, 0)] -= mu * q[t - 1];
            // P = γ̄ (I + S γ̄)^{-1} = (I + γ̄ S)^{-1} γ̄.
            let p = guarded_solve(&(DMatrix::identity(2, 2) + prev * &s), prev).map_err(|condition| {
                Error::SingularInnovationMatrix { step: t, condition }
            })?;
            let f = DMatrix::from_row_slice(2, 2, &[a[t], 0.0, -alpha[t - 1], 0.0]);
            g += &f * p * f.transpose();
        }
        let gain = DMatrix::from_row_slice(1, 2, &[alpha[t], b]);
        let mut s = gain.transpose() * &gain;
        s[(0, 0)] -= mu * q[t];
        if let Some(info) = matrix_violation(t, &g, &s) {
            return Err(info.to_error());
        }
        out.push(g);
    }
    Ok(out)
}
