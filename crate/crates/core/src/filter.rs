//! The optimal filter `h̄`, the auxiliary processes `Z^h` and `Z̃^h`, and the
//! specialized AR(1), MA(1) and vector/correlated recursions.
//!
//! For a scalar model with feasible `γ̄`,
//!
//! ```text
//! h̄_t = [m_t + Σ_{l<t} A_l γ̄(t,l)(Y_l − A_l h̄_l) + A_t γ̄_t Y_t] / (1 + A_t² γ̄_t)
//! ```
//!
//! Observations and estimates are plain slices indexed `0..T`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dvec, guarded_solve, LowerTri};
use crate::model::{GaussianModel, RiskSpec};
use crate::volterra::{
    self, ar1_riccati, innovation_solve, ma1_gamma, obs_cross, stage_terms, MatrixVolterraSolution,
    VolterraSolution,
};

/// Relative agreement required between the two `Z̃^h` computations.
pub const RECURSION_TOL: f64 = 1e-9;

/// Per-step output of a scalar filter run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterRun {
    pub mu: f64,
    pub y: Vec<f64>,
    pub h_bar: Vec<f64>,
    pub z_h: Vec<f64>,
    pub z_tilde: Vec<f64>,
    pub gamma_bar: Vec<f64>,
    pub gamma_tilde: Vec<f64>,
    /// `None` when `μ = 0`, where the criterion degenerates.
    pub risk: Option<f64>,
}

impl FilterRun {
    pub fn horizon(&self) -> usize {
        self.h_bar.len()
    }

    /// CSV with columns `t, Y, h_bar, Z_h, Z_tilde, gamma_bar, gamma_tilde`, `t` 1-based.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::InvalidArgument(format!("writing CSV: {e}"));
        w.write_record(["t", "Y", "h_bar", "Z_h", "Z_tilde", "gamma_bar", "gamma_tilde"])
            .map_err(io)?;
        for t in 0..self.horizon() {
            w.serialize((
                t + 1,
                self.y[t],
                self.h_bar[t],
                self.z_h[t],
                self.z_tilde[t],
                self.gamma_bar[t],
                self.gamma_tilde[t],
            ))
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::InvalidArgument(format!("writing CSV: {e}")))?;
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        [&self.h_bar, &self.z_h, &self.z_tilde, &self.gamma_bar, &self.gamma_tilde]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
            && self.risk.is_none_or(f64::is_finite)
    }
}

/// Causal affine filter `h_t = c_t + Σ_{l<=t} G(t, l) Y_l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineFilter {
    pub intercept: Vec<f64>,
    pub gain: LowerTri<f64>,
}

impl AffineFilter {
    pub fn new(intercept: Vec<f64>, gain: LowerTri<f64>) -> Result<Self> {
        if intercept.len() != gain.horizon() {
            return Err(Error::DimensionMismatch(format!(
                "affine filter has {} intercepts and a gain of horizon {}",
                intercept.len(),
                gain.horizon()
            )));
        }
        Ok(Self { intercept, gain })
    }

    /// Identifies an affine causal map by evaluating it at zero and at the unit vectors.
    pub fn identify(horizon: usize, f: impl Fn(&[f64]) -> Result<Vec<f64>>) -> Result<Self> {
        let intercept = f(&vec![0.0; horizon])?;
        let mut gain = LowerTri::filled(horizon, 0.0);
        let mut e = vec![0.0; horizon];
        for l in 0..horizon {
            e[l] = 1.0;
            let out = f(&e)?;
            e[l] = 0.0;
            for t in l..horizon {
                gain.set(t, l, out[t] - intercept[t]);
            }
        }
        Self::new(intercept, gain)
    }

    pub fn horizon(&self) -> usize {
        self.intercept.len()
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.horizon()];
        self.apply_into(y, &mut out);
        out
    }

    pub fn apply_into(&self, y: &[f64], out: &mut [f64]) {
        for t in 0..self.horizon() {
            let row = self.gain.row(t);
            let mut v = self.intercept[t];
            for (g, yl) in row.iter().zip(y) {
                v += g * yl;
            }
            out[t] = v;
        }
    }

    /// Flat coefficient vector `(c_1, G(1,1), c_2, G(2,1), G(2,2), ...)`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for t in 0..self.horizon() {
            v.push(self.intercept[t]);
            v.extend_from_slice(self.gain.row(t));
        }
        v
    }

    pub fn from_flat(horizon: usize, flat: &[f64]) -> Result<Self> {
        let expected = horizon * (horizon + 3) / 2;
        if flat.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficients for horizon {horizon}, expected {expected}",
                flat.len()
            )));
        }
        let mut intercept = Vec::with_capacity(horizon);
        let mut rows = Vec::with_capacity(horizon);
        let mut k = 0;
        for t in 0..horizon {
            intercept.push(flat[k]);
            rows.push(flat[k + 1..k + 2 + t].to_vec());
            k += t + 2;
        }
        Self::new(intercept, LowerTri::from_rows(rows)?)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.to_flat()
            .iter()
            .zip(other.to_flat())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_obs(y: &[f64], expected: usize, what: &str) -> Result<()> {
    if y.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "{what} has {} entries, expected {expected}",
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what} must be finite")));
    }
    Ok(())
}

/// LEG/RS filter on a scalar model.
pub fn leg_filter(model: &GaussianModel, risk: &RiskSpec, y: &[f64]) -> Result<FilterRun> {
    let sol = volterra::solve_volterra(model, risk)?;
    leg_filter_with(model, risk, &sol, y)
}

/// As [`leg_filter`] with a precomputed Volterra solution.
pub fn leg_filter_with(model: &GaussianModel, risk: &RiskSpec, sol: &VolterraSolution, y: &[f64]) -> Result<FilterRun> {
    sol.require_feasible()?;
    let (m, _, a) = model.scalar_parts()?;
    let horizon = model.horizon();
    check_obs(y, horizon, "observation sequence")?;
    let mut h = vec![0.0; horizon];
    for t in 0..horizon {
        let mut num = m[t];
        for l in 0..t {
            num += a[l] * sol.get(t, l) * (y[l] - a[l] * h[l]);
        }
        num += a[t] * sol.diag[t] * y[t];
        h[t] = num / (1.0 + a[t] * a[t] * sol.diag[t]);
    }
    let z = z_h_with(model, risk, sol, y, &h)?;
    let (z_tilde, gamma_tilde) = z_tilde_from(model, risk, sol, y, &h, &z)?;
    let risk_value = if risk.mu() == 0.0 {
        None
    } else {
        Some(optimal_risk(sol, risk, &a)?)
    };
    Ok(FilterRun {
        mu: risk.mu(),
        y: y.to_vec(),
        h_bar: h,
        z_h: z,
        z_tilde,
        gamma_bar: sol.diag.clone(),
        gamma_tilde,
        risk: risk_value,
    })
}

/// Affine coefficients of `h̄`, propagated through the recursion without
/// evaluating on basis sequences.
pub fn leg_affine(model: &GaussianModel, risk: &RiskSpec) -> Result<AffineFilter> {
    let sol = volterra::solve_volterra(model, risk)?;
    leg_affine_with(model, &sol)
}

pub fn leg_affine_with(model: &GaussianModel, sol: &VolterraSolution) -> Result<AffineFilter> {
    sol.require_feasible()?;
    let (m, _, a) = model.scalar_parts()?;
    let horizon = model.horizon();
    let mut c = vec![0.0; horizon];
    let mut g = LowerTri::filled(horizon, 0.0);
    // Innovation coefficients of Y_l − A_l h̄_l: intercept and gains on Y_0..=Y_l.
    let mut innov_c = vec![0.0; horizon];
    let mut innov_g: Vec<Vec<f64>> = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mut ct = m[t];
        let mut gt = vec![0.0; t + 1];
        for l in 0..t {
            let w = a[l] * sol.get(t, l);
            ct += w * innov_c[l];
            for (k, v) in innov_g[l].iter().enumerate() {
                gt[k] += w * v;
            }
        }
        gt[t] += a[t] * sol.diag[t];
        let denom = 1.0 + a[t] * a[t] * sol.diag[t];
        ct /= denom;
        for v in gt.iter_mut() {
            *v /= denom;
        }
        innov_c[t] = -a[t] * ct;
        let mut ig: Vec<f64> = gt.iter().map(|v| -a[t] * v).collect();
        ig[t] += 1.0;
        innov_g.push(ig);
        c[t] = ct;
        for (s, v) in gt.into_iter().enumerate() {
            g.set(t, s, v);
        }
    }
    AffineFilter::new(c, g)
}

/// `μ ∏_t [(1 + S_t γ̄_t) / (1 + A_t² γ̄_t)]^{-1/2}`; errors for `μ = 0`.
pub fn optimal_risk(sol: &VolterraSolution, risk: &RiskSpec, gains: &[f64]) -> Result<f64> {
    if risk.mu() == 0.0 {
        return Err(Error::DomainError(
            "the optimal risk is undefined for μ = 0".into(),
        ));
    }
    sol.require_feasible()?;
    Ok(risk.mu() * log_risk_factor(sol, gains).exp())
}

/// `log ∏ [(1 + S_t γ̄_t)/(1 + A_t² γ̄_t)]^{-1/2}`.
pub fn log_risk_factor(sol: &VolterraSolution, gains: &[f64]) -> f64 {
    sol.diag
        .iter()
        .zip(&sol.s)
        .zip(gains)
        .map(|((g, s), a)| -0.5 * ((1.0 + s * g) / (1.0 + a * a * g)).ln())
        .sum()
}

/// `Z^h` for a realized causal sequence `h`.
pub fn z_h(model: &GaussianModel, risk: &RiskSpec, y: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    let sol = volterra::solve_volterra(model, risk)?;
    z_h_with(model, risk, &sol, y, h)
}

pub fn z_h_with(model: &GaussianModel, risk: &RiskSpec, sol: &VolterraSolution, y: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    sol.require_feasible()?;
    let (m, _, a) = model.scalar_parts()?;
    let horizon = model.horizon();
    check_obs(y, horizon, "observation sequence")?;
    check_obs(h, horizon, "estimate sequence")?;
    let q = risk.q();
    let mu = risk.mu();
    let mut z = vec![0.0; horizon];
    for t in 0..horizon {
        let mut v = m[t];
        for l in 0..t {
            let denom = 1.0 + sol.s[l] * sol.diag[l];
            v -= sol.get(t, l) * mu * q[l] / denom * (h[l] - z[l]);
            v += sol.get(t, l) * a[l] / denom * (y[l] - a[l] * z[l]);
        }
        z[t] = v;
    }
    Ok(z)
}

/// `(Z̃^h, γ̃)`, computed by the direct recursion and checked against
/// `Z̃^h_t = (Z^h_t + A_t γ̄_t Y_t)/(1 + A_t² γ̄_t)`.
pub fn z_tilde(model: &GaussianModel, risk: &RiskSpec, y: &[f64], h: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let sol = volterra::solve_volterra(model, risk)?;
    let z = z_h_with(model, risk, &sol, y, h)?;
    z_tilde_from(model, risk, &sol, y, h, &z)
}

pub(crate) fn z_tilde_from(
    model: &GaussianModel,
    risk: &RiskSpec,
    sol: &VolterraSolution,
    y: &[f64],
    h: &[f64],
    z: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (m, _, a) = model.scalar_parts()?;
    let horizon = model.horizon();
    let q = risk.q();
    let mu = risk.mu();
    let mut zt = vec![0.0; horizon];
    let mut gamma_tilde = vec![0.0; horizon];
    for t in 0..horizon {
        let mut v = m[t];
        for l in 0..t {
            let denom = 1.0 + sol.s[l] * sol.diag[l];
            v -= sol.get(t, l) * mu * q[l] / denom * (h[l] - zt[l]);
            v += sol.get(t, l) * a[l] * (y[l] - a[l] * zt[l]);
        }
        // The l = t term is implicit in Z̃_t.
        let scale = 1.0 + a[t] * a[t] * sol.diag[t];
        zt[t] = (v + sol.diag[t] * a[t] * y[t]) / scale;
        gamma_tilde[t] = sol.diag[t] / scale;
        let algebraic = (z[t] + a[t] * sol.diag[t] * y[t]) / scale;
        let discrepancy = (algebraic - zt[t]).abs() / zt[t].abs().max(1.0);
        if !(discrepancy <= RECURSION_TOL) {
            return Err(Error::InconsistentRecursion {
                step: t + 1,
                discrepancy,
            });
        }
    }
    Ok((zt, gamma_tilde))
}

/// Conditional expectation `E[X_t | Y_1..Y_t]`, the `μ = 0` case.
pub fn risk_neutral_filter(model: &GaussianModel, y: &[f64]) -> Result<Vec<f64>> {
    let risk = RiskSpec::scalar(0.0, vec![0.0; model.horizon()])?;
    Ok(leg_filter(model, &risk, y)?.h_bar)
}

pub fn risk_neutral_affine(model: &GaussianModel) -> Result<AffineFilter> {
    let risk = RiskSpec::scalar(0.0, vec![0.0; model.horizon()])?;
    leg_affine(model, &risk)
}

fn build_run(mu: f64, y: &[f64], h: Vec<f64>, z: Vec<f64>, gamma: Vec<f64>, gains: &[f64], risk: Option<f64>) -> FilterRun {
    let gamma_tilde = gamma
        .iter()
        .zip(gains)
        .map(|(g, a)| g / (1.0 + a * a * g))
        .collect();
    FilterRun {
        mu,
        y: y.to_vec(),
        z_tilde: h.clone(),
        h_bar: h,
        z_h: z,
        gamma_bar: gamma,
        gamma_tilde,
        risk,
    }
}

fn product_risk(mu: f64, gamma: &[f64], gains: &[f64], q: &[f64]) -> Option<f64> {
    if mu == 0.0 {
        return None;
    }
    let log: f64 = gamma
        .iter()
        .zip(gains)
        .zip(q)
        .map(|((g, a), qt)| -0.5 * ((1.0 + (a * a - mu * qt) * g) / (1.0 + a * a * g)).ln())
        .sum();
    Some(mu * log.exp())
}

/// One-pass AR(1) filter: `h̄_t = [a_t h̄_{t−1} + A_t γ̄_t Y_t] / (1 + A_t² γ̄_t)`, `h̄_0 = x0`.
pub fn ar1_filter(a: &[f64], d: &[f64], x0: f64, gains: &[f64], q: &[f64], mu: f64, y: &[f64]) -> Result<FilterRun> {
    let gamma = ar1_riccati(a, d, gains, q, mu)?;
    check_obs(y, a.len(), "observation sequence")?;
    let mut h = Vec::with_capacity(a.len());
    let mut z = Vec::with_capacity(a.len());
    let mut prev = x0;
    for t in 0..a.len() {
        let scale = 1.0 + gains[t] * gains[t] * gamma[t];
        z.push(a[t] * prev);
        let next = a[t] / scale * prev + gains[t] * gamma[t] / scale * y[t];
        h.push(next);
        prev = next;
    }
    let risk = product_risk(mu, &gamma, gains, q);
    Ok(build_run(mu, y, h, z, gamma, gains, risk))
}

/// Equivalent innovation form `h̄_t = a_t h̄_{t−1} + A_t γ̄_t/(1 + A_t² γ̄_t)(Y_t − a_t A_t h̄_{t−1})`.
pub fn ar1_filter_innovation_form(
    a: &[f64],
    d: &[f64],
    x0: f64,
    gains: &[f64],
    q: &[f64],
    mu: f64,
    y: &[f64],
) -> Result<Vec<f64>> {
    let gamma = ar1_riccati(a, d, gains, q, mu)?;
    check_obs(y, a.len(), "observation sequence")?;
    let mut h = Vec::with_capacity(a.len());
    let mut prev = x0;
    for t in 0..a.len() {
        let k = gains[t] * gamma[t] / (1.0 + gains[t] * gains[t] * gamma[t]);
        let pred = a[t] * prev;
        let next = pred + k * (y[t] - gains[t] * pred);
        h.push(next);
        prev = next;
    }
    Ok(h)
}

/// One-pass MA(1) filter:
/// `h̄_t = [λ A_{t−1}(Y_{t−1} − A_{t−1} h̄_{t−1}) + A_t γ̄_t Y_t] / (1 + A_t² γ̄_t)`.
pub fn ma1_filter(lambda: f64, gains: &[f64], q: &[f64], mu: f64, y: &[f64]) -> Result<FilterRun> {
    let gamma = ma1_gamma(lambda, gains, q, mu)?;
    check_obs(y, gains.len(), "observation sequence")?;
    let mut h: Vec<f64> = Vec::with_capacity(gains.len());
    let mut z = Vec::with_capacity(gains.len());
    for t in 0..gains.len() {
        let scale = 1.0 + gains[t] * gains[t] * gamma[t];
        let lag = if t == 0 {
            0.0
        } else {
            lambda * gains[t - 1] * (y[t - 1] - gains[t - 1] * h[t - 1])
        };
        z.push(lag);
        h.push(lag / scale + gains[t] * gamma[t] * y[t] / scale);
    }
    let risk = product_risk(mu, &gamma, gains, q);
    Ok(build_run(mu, y, h, z, gamma, gains, risk))
}

/// Output of the vector / correlated-noise filter.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFilterRun {
    pub mu: f64,
    pub h_bar: Vec<DVector<f64>>,
    pub z_h: Vec<DVector<f64>>,
    pub z_tilde: Vec<DVector<f64>>,
    pub gamma_bar: Vec<DMatrix<f64>>,
}

impl VectorFilterRun {
    /// Estimates of the first signal component.
    pub fn first_component(&self) -> Vec<f64> {
        self.h_bar.iter().map(|v| v[0]).collect()
    }
}

fn obs_at(y: &[f64], t: usize, m: usize) -> DVector<f64> {
    dvec(&y[t * m..(t + 1) * m])
}

/// Vector LEG filter. `y` is flat, `T·m` long. The gain on `Y_l − A_l h̄_l` is
/// `[γ̄(t,l) A_lᵀ + K_Xε(t,l)] (I + K_Xε(l,l)ᵀ A_lᵀ)^{-1}`, with the `l = t`
/// term solved implicitly.
pub fn filter_correlated(model: &GaussianModel, risk: &RiskSpec, y: &[f64]) -> Result<VectorFilterRun> {
    let sol = volterra::solve_any(model, risk)?;
    filter_correlated_with(model, risk, &sol, y)
}

pub fn filter_correlated_with(
    model: &GaussianModel,
    risk: &RiskSpec,
    sol: &MatrixVolterraSolution,
    y: &[f64],
) -> Result<VectorFilterRun> {
    sol.require_feasible()?;
    let horizon = model.horizon();
    let n = model.signal_dim();
    let m = model.obs_dim();
    check_obs(y, horizon * m, "observation sequence")?;
    // R_l = (I + K_Xε(l,l)ᵀ A_lᵀ); residual weights R_l^{-1}(Y_l − A_l h̄_l).
    let mut weighted: Vec<DVector<f64>> = Vec::with_capacity(horizon);
    let mut h: Vec<DVector<f64>> = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let a = &model.gains()[t];
        let mut c = model.mean()[t].clone();
        for l in 0..t {
            c += obs_cross(model, sol.get(t, l), t, l) * &weighted[l];
        }
        let r = DMatrix::identity(m, m) + model.cross_block(t, t).transpose() * a.transpose();
        // B = G_tt R^{-1}, via Bᵀ = R^{-ᵀ} G_ttᵀ.
        let g_tt = obs_cross(model, sol.get(t, t), t, t);
        let b = innovation_solve(&r.transpose(), &g_tt.transpose(), t)?.transpose();
        let yt = obs_at(y, t, m);
        let lhs = DMatrix::identity(n, n) + &b * a;
        let rhs = DMatrix::from_column_slice(n, 1, (c + &b * &yt).as_slice());
        let ht = guarded_solve(&lhs, &rhs)
            .map_err(|condition| Error::SingularInnovationMatrix { step: t + 1, condition })?
            .column(0)
            .into_owned();
        let resid = DMatrix::from_column_slice(m, 1, (&yt - a * &ht).as_slice());
        weighted.push(innovation_solve(&r, &resid, t)?.column(0).into_owned());
        h.push(ht);
    }
    let (z, _) = z_vector(model, risk, sol, y, &h)?;
    Ok(VectorFilterRun {
        mu: risk.mu(),
        z_tilde: h.clone(),
        h_bar: h,
        z_h: z,
        gamma_bar: sol.diag.clone(),
    })
}

/// Two-stage `(Z^h, Z̃^h)` for vector models with a realized sequence `h`:
///
/// ```text
/// Z_t = m_t + Σ_{l<t} [G_{t,l} V_l^{-1}(Y_l − A_l Z_l) + γ̄'(t,l) W_l (h_l − Z̃_l)]
/// Z̃_t = Z_t + G_{t,t} V_t^{-1}(Y_t − A_t Z_t)
/// ```
pub fn z_vector(
    model: &GaussianModel,
    risk: &RiskSpec,
    sol: &MatrixVolterraSolution,
    y: &[f64],
    h: &[DVector<f64>],
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    sol.require_feasible()?;
    let horizon = model.horizon();
    let m = model.obs_dim();
    if h.len() != horizon {
        return Err(Error::DimensionMismatch("estimate sequence length".into()));
    }
    let stages = (0..horizon)
        .map(|l| stage_terms(model, risk, &sol.diag[l], l))
        .collect::<Result<Vec<_>>>()?;
    let mut innov_w: Vec<DVector<f64>> = Vec::with_capacity(horizon);
    let mut risk_w: Vec<DVector<f64>> = Vec::with_capacity(horizon);
    let mut z = Vec::with_capacity(horizon);
    let mut zt = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mut v = model.mean()[t].clone();
        for l in 0..t {
            let gtl = obs_cross(model, sol.get(t, l), t, l);
            let g_ll = obs_cross(model, sol.get(l, l), l, l);
            let post = sol.get(t, l) - &gtl * innovation_solve(&stages[l].innovation, &g_ll.transpose(), l)?;
            v += &gtl * &innov_w[l] + post * &risk_w[l];
        }
        let a = &model.gains()[t];
        let resid = DMatrix::from_column_slice(m, 1, (obs_at(y, t, m) - a * &v).as_slice());
        let w = innovation_solve(&stages[t].innovation, &resid, t)?.column(0).into_owned();
        let tilde = &v + obs_cross(model, sol.get(t, t), t, t) * &w;
        risk_w.push(&stages[t].risk_gain * (&h[t] - &tilde));
        innov_w.push(w);
        z.push(v);
        zt.push(tilde);
    }
    Ok((z, zt))
}

/// Markov-form filter for the AR(1)-signal / AR(1)-noise preset, state `(X_t, ε_{t−1})`:
/// `h̄_t = F_t h̄_{t−1} + c (Y_{t−1} − A_{t−1} h̄_{t−1}) + γ̄_t A_tᵀ (Y_t − A_t h̄_t)`,
/// `F_t = diag(a_t, b)`, `c = (0, 1)ᵀ`, `h̄_0 = 0`.
pub fn ar1_noise_filter(
    a: &[f64],
    d: &[f64],
    alpha: &[f64],
    b: f64,
    q: &[f64],
    mu: f64,
    y: &[f64],
) -> Result<Vec<DVector<f64>>> {
    let gamma = volterra::ar1_noise_riccati(a, d, alpha, b, q, mu)?;
    check_obs(y, a.len(), "observation sequence")?;
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(a.len());
    for t in 0..a.len() {
        let mut pred = DVector::zeros(2);
        if t > 0 {
            let prev = &out[t - 1];
            pred[0] = a[t] * prev[0];
            pred[1] = b * prev[1] + (y[t - 1] - alpha[t - 1] * prev[0] - b * prev[1]);
        }
        let gain = DMatrix::from_row_slice(1, 2, &[alpha[t], b]);
        let lhs = DMatrix::identity(2, 2) + &gamma[t] * gain.transpose() * &gain;
        let rhs = &pred + &gamma[t] * gain.transpose() * y[t];
        let ht = guarded_solve(&lhs, &DMatrix::from_column_slice(2, 1, rhs.as_slice()))
            .map_err(|condition| Error::SingularInnovationMatrix { step: t + 1, condition })?;
        out.push(ht.column(0).into_owned());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> GaussianModel {
        GaussianModel::ar1(&[0.9, 0.5, 1.2], &[1.0, 0.5, 2.0], 0.7, &[1.0, 0.3, 1.5]).unwrap()
    }

    #[test]
    fn z_h_base_case_and_tilde_identity() {
        let m = model();
        let risk = RiskSpec::scalar(-1.0, vec![1.0, 2.0, 0.5]).unwrap();
        let y = [0.3, -1.2, 2.0];
        let run = leg_filter(&m, &risk, &y).unwrap();
        assert!((run.z_h[0] - 0.9 * 0.7).abs() < 1e-15);
        for t in 0..3 {
            assert!((run.z_tilde[t] - run.h_bar[t]).abs() < 1e-12);
        }
        assert!(run.risk.unwrap() < 0.0);
    }

    #[test]
    fn zero_gain_collapses_tilde() {
        let m = GaussianModel::ar1(&[0.9; 3], &[1.0; 3], 0.0, &[0.0; 3]).unwrap();
        let risk = RiskSpec::scalar(-1.0, vec![1.0; 3]).unwrap();
        let (zt, gt) = z_tilde(&m, &risk, &[1.0, 2.0, 3.0], &[0.5, 0.1, -0.2]).unwrap();
        let z = z_h(&m, &risk, &[1.0, 2.0, 3.0], &[0.5, 0.1, -0.2]).unwrap();
        let sol = volterra::solve_volterra(&m, &risk).unwrap();
        assert_eq!(zt, z);
        assert_eq!(gt, sol.diag);
    }

    #[test]
    fn zero_weight_risk_is_mu() {
        let m = model();
        let risk = RiskSpec::scalar(-2.0, vec![0.0; 3]).unwrap();
        assert!((leg_filter(&m, &risk, &[0.0; 3]).unwrap().risk.unwrap() + 2.0).abs() < 1e-15);
        let zero = RiskSpec::scalar(0.0, vec![1.0; 3]).unwrap();
        let sol = volterra::solve_volterra(&m, &zero).unwrap();
        assert!(matches!(optimal_risk(&sol, &zero, &[1.0, 0.3, 1.5]), Err(Error::DomainError(_))));
    }

    #[test]
    fn ar1_specialization_and_innovation_form() {
        let a = [0.9, 0.5, 1.2];
        let d = [1.0, 0.5, 2.0];
        let gains = [1.0, 0.3, 1.5];
        let q = [1.0, 2.0, 0.5];
        let y = [0.3, -1.2, 2.0];
        let general = leg_filter(&model(), &RiskSpec::scalar(-0.5, q.to_vec()).unwrap(), &y).unwrap();
        let special = ar1_filter(&a, &d, 0.7, &gains, &q, -0.5, &y).unwrap();
        let innov = ar1_filter_innovation_form(&a, &d, 0.7, &gains, &q, -0.5, &y).unwrap();
        for t in 0..3 {
            assert!((general.h_bar[t] - special.h_bar[t]).abs() < 1e-12);
            assert!((general.z_h[t] - special.z_h[t]).abs() < 1e-12);
            assert!((innov[t] - special.h_bar[t]).abs() < 1e-12);
        }
        assert!((general.risk.unwrap() - special.risk.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ma1_specialization() {
        let gains = [1.0, 0.4, 2.0, 0.0, 1.1];
        let q = [1.0, 0.5, 1.0, 2.0, 1.0];
        let y = [0.1, 0.5, -0.4, 1.0, 2.0];
        let m = GaussianModel::ma1(0.8, &gains).unwrap();
        let general = leg_filter(&m, &RiskSpec::scalar(-1.3, q.to_vec()).unwrap(), &y).unwrap();
        let special = ma1_filter(0.8, &gains, &q, -1.3, &y).unwrap();
        for t in 0..5 {
            assert!((general.h_bar[t] - special.h_bar[t]).abs() < 1e-12);
            assert!((general.gamma_bar[t] - special.gamma_bar[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_propagation_matches_identification() {
        let m = model();
        let risk = RiskSpec::scalar(-0.8, vec![1.0, 2.0, 0.5]).unwrap();
        let direct = leg_affine(&m, &risk).unwrap();
        let identified = AffineFilter::identify(3, |y| Ok(leg_filter(&m, &risk, y)?.h_bar)).unwrap();
        assert!(direct.max_abs_diff(&identified) < 1e-13);
        let flat = direct.to_flat();
        assert_eq!(flat.len(), 9);
        assert_eq!(AffineFilter::from_flat(3, &flat).unwrap(), direct);
    }

    #[test]
    fn causality() {
        let m = model();
        let risk = RiskSpec::scalar(-1.0, vec![1.0; 3]).unwrap();
        let a = leg_filter(&m, &risk, &[0.3, -1.2, 2.0]).unwrap();
        let b = leg_filter(&m, &risk, &[0.3, -1.2, -40.0]).unwrap();
        assert_eq!(a.h_bar[..2], b.h_bar[..2]);
    }

    #[test]
    fn vector_reduces_to_scalar() {
        let m = model();
        let risk = RiskSpec::scalar(-1.0, vec![1.0, 2.0, 0.5]).unwrap();
        let y = [0.3, -1.2, 2.0];
        let s = leg_filter(&m, &risk, &y).unwrap();
        let v = filter_correlated(&m, &risk, &y).unwrap();
        for t in 0..3 {
            assert!((s.h_bar[t] - v.h_bar[t][0]).abs() < 1e-14);
            assert!((s.z_h[t] - v.z_h[t][0]).abs() < 1e-13);
        }
    }

    #[test]
    fn ar1_noise_preset_filter() {
        let a = [0.8, 1.1, 0.5, 0.9];
        let d = [1.0, 0.5, 2.0, 1.0];
        let alpha = [1.0, 0.7, 1.3, 0.2];
        let b = 0.6;
        let q = [1.0, 2.0, 0.5, 1.0];
        let y = [0.5, -0.3, 1.2, 0.4];
        let m = GaussianModel::ar1_observation_noise(&a, &d, &alpha, b).unwrap();
        let risk = RiskSpec::first_component(-1.0, q.to_vec(), 2).unwrap();
        let general = filter_correlated(&m, &risk, &y).unwrap();
        let markov = ar1_noise_filter(&a, &d, &alpha, b, &q, -1.0, &y).unwrap();
        for t in 0..4 {
            assert!((&general.h_bar[t] - &markov[t]).amax() < 1e-12, "t={t}");
        }
        let sol = volterra::solve_any(&m, &risk).unwrap();
        let (_, zt) = z_vector(&m, &risk, &sol, &y, &general.h_bar).unwrap();
        for t in 0..4 {
            assert!((&zt[t] - &general.h_bar[t]).amax() < 1e-12);
        }
    }

    #[test]
    fn csv_layout() {
        let run = leg_filter(&model(), &RiskSpec::scalar(-1.0, vec![1.0; 3]).unwrap(), &[0.0; 3]).unwrap();
        let mut buf = Vec::new();
        run.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,Y,h_bar,Z_h,Z_tilde,gamma_bar,gamma_tilde\n1,"));
        assert_eq!(text.lines().count(), 4);
    }
}
