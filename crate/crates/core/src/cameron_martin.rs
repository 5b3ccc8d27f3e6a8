//! Conditional Cameron–Martin factorization of the exponential-quadratic
//! criterion: per-step factors, the martingale `M_t`, innovations and the
//! information-state density.
//!
//! Everything is assembled in log space; plain values are derived on demand.

use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::filter::{self, AffineFilter};
use crate::linalg::CompensatedSum;
use crate::model::{GaussianModel, RiskSpec, Sampler};
use crate::oracle::{assemble_joint, log_exp_quadratic, AugmentedSystem, JointGaussian, DEGENERATE_TOL};
use crate::par::{self, Execution};
use crate::volterra::{self, VolterraSolution};

/// Paths per work unit in Monte Carlo loops.
const BATCH: usize = 4096;

#[derive(Debug, Clone, Serialize)]
pub struct CMDecomposition {
    pub mu: f64,
    /// `log I_t`, the criterion truncated at step `t` given `Y_1..Y_t`.
    pub log_i: Vec<f64>,
    /// `log M_t`.
    pub log_m: Vec<f64>,
    /// `log M_t − log M_{t−1}`.
    pub log_m_step: Vec<f64>,
    /// `Y_t − π_{t−1}(Y_t)`.
    pub nu: Vec<f64>,
    /// Risk-neutral prediction `π_{t−1}(X_t)`.
    pub pi: Vec<f64>,
    /// Risk-neutral one-step variance `γ_t`.
    pub gamma: Vec<f64>,
    pub gamma_bar: Vec<f64>,
    pub z_h: Vec<f64>,
    pub z_tilde: Vec<f64>,
    pub gamma_tilde: Vec<f64>,
    /// Log of the determinant factor at each step.
    pub log_bracket: Vec<f64>,
    /// Quadratic exponent at each step.
    pub exponent: Vec<f64>,
}

impl CMDecomposition {
    pub fn horizon(&self) -> usize {
        self.log_i.len()
    }

    pub fn log_i_final(&self) -> f64 {
        *self.log_i.last().unwrap_or(&0.0)
    }

    pub fn i_final(&self) -> f64 {
        self.log_i_final().exp()
    }

    pub fn log_m_final(&self) -> f64 {
        *self.log_m.last().unwrap_or(&0.0)
    }

    pub fn m_final(&self) -> f64 {
        self.log_m_final().exp()
    }

    /// `log bracket + exponent` per step.
    pub fn log_factor(&self, t: usize) -> f64 {
        self.log_bracket[t] + self.exponent[t]
    }

    pub fn write_csv<W: Write>(&self, out: W, y: &[f64], h: &[f64]) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::InvalidArgument(format!("csv output: {e}"));
        w.write_record([
            "t", "Y", "h", "nu", "pi", "gamma", "gamma_bar", "Z_h", "Z_tilde", "gamma_tilde", "log_bracket",
            "exponent", "log_M", "log_I",
        ])
        .map_err(io)?;
        for t in 0..self.horizon() {
            let row = [
                y[t],
                h[t],
                self.nu[t],
                self.pi[t],
                self.gamma[t],
                self.gamma_bar[t],
                self.z_h[t],
                self.z_tilde[t],
                self.gamma_tilde[t],
                self.log_bracket[t],
                self.exponent[t],
                self.log_m[t],
                self.log_i[t],
            ];
            let mut rec = vec![(t + 1).to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| Error::InvalidArgument(format!("csv output: {e}")))
    }
}

/// Precomputed Volterra solutions for `μ` and for `μ = 0`.
#[derive(Debug, Clone)]
pub struct CmContext {
    model: GaussianModel,
    risk: RiskSpec,
    risk0: RiskSpec,
    sol: VolterraSolution,
    sol0: VolterraSolution,
    gains: Vec<f64>,
}

impl CmContext {
    pub fn new(model: &GaussianModel, risk: &RiskSpec) -> Result<Self> {
        let (_, _, gains) = model.scalar_parts()?;
        let sol = volterra::solve_volterra(model, risk)?;
        sol.require_feasible()?;
        let risk0 = risk.with_mu(0.0);
        let sol0 = volterra::solve_volterra(model, &risk0)?;
        Ok(Self {
            model: model.clone(),
            risk: risk.clone(),
            risk0,
            sol,
            sol0,
            gains,
        })
    }

    pub fn decompose(&self, y: &[f64], h: &[f64]) -> Result<CMDecomposition> {
        let (model, risk, sol, sol0) = (&self.model, &self.risk, &self.sol, &self.sol0);
        let z = filter::z_h_with(model, risk, sol, y, h)?;
        let (zt, gt) = filter::z_tilde_from(model, risk, sol, y, h, &z)?;
        let pi = filter::z_h_with(model, &self.risk0, sol0, y, h)?;
        let q = risk.q();
        let mu = risk.mu();
        let horizon = model.horizon();
        let mut out = CMDecomposition {
            mu,
            log_i: Vec::with_capacity(horizon),
            log_m: Vec::with_capacity(horizon),
            log_m_step: Vec::with_capacity(horizon),
            nu: Vec::with_capacity(horizon),
            pi: pi.clone(),
            gamma: sol0.diag.clone(),
            gamma_bar: sol.diag.clone(),
            z_h: z.clone(),
            z_tilde: zt.clone(),
            gamma_tilde: gt,
            log_bracket: Vec::with_capacity(horizon),
            exponent: Vec::with_capacity(horizon),
        };
        let mut log_m = 0.0;
        let mut log_prod = 0.0;
        for t in 0..horizon {
            let a = self.gains[t];
            let (gb, g0, s) = (sol.diag[t], sol0.diag[t], sol.s[t]);
            let nu = y[t] - a * pi[t];
            let tilted = 1.0 + a * a * gb;
            let plain = 1.0 + a * a * g0;
            let bracket = -0.5 * ((1.0 + s * gb) / tilted).ln();
            let exponent = 0.5 * mu * q[t] * tilted / (1.0 + s * gb) * (h[t] - zt[t]).powi(2);
            let dz = z[t] - pi[t];
            let step = 0.5 * (plain / tilted).ln() + a * dz * nu / tilted
                - 0.5 * a * a * dz * dz / tilted
                - 0.5 * a * a * (g0 - gb) * nu * nu / (tilted * plain);
            log_m += step;
            log_prod += bracket + exponent;
            out.nu.push(nu);
            out.log_bracket.push(bracket);
            out.exponent.push(exponent);
            out.log_m_step.push(step);
            out.log_m.push(log_m);
            out.log_i.push(log_prod + log_m);
        }
        Ok(out)
    }

    /// `log M_T` only.
    pub fn log_martingale(&self, y: &[f64], h: &[f64]) -> Result<f64> {
        Ok(self.decompose(y, h)?.log_m_final())
    }
}

/// Factorization of `I_T` for a scalar model along a realized `(Y, h)`.
pub fn cm_decompose(model: &GaussianModel, risk: &RiskSpec, y: &[f64], h: &[f64]) -> Result<CMDecomposition> {
    CmContext::new(model, risk)?.decompose(y, h)
}

/// Gaussian information-state density `λ_t(x) = weight · N(x; center, variance)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InfoStateDensity {
    /// 1-based step.
    pub step: usize,
    pub center: f64,
    pub variance: f64,
    pub log_weight: f64,
}

impl InfoStateDensity {
    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }

    pub fn density(&self, x: f64) -> f64 {
        let z = (x - self.center).powi(2) / self.variance;
        (self.log_weight - 0.5 * z - 0.5 * (2.0 * std::f64::consts::PI * self.variance).ln()).exp()
    }
}

/// Information-state density at 1-based step `t`.
pub fn info_state(model: &GaussianModel, risk: &RiskSpec, y: &[f64], h: &[f64], t: usize) -> Result<InfoStateDensity> {
    let horizon = model.horizon();
    if t == 0 || t > horizon {
        return Err(Error::InvalidArgument(format!("step {t} outside 1..={horizon}")));
    }
    let d = cm_decompose(model, risk, y, h)?;
    let k = t - 1;
    let variance = d.gamma_tilde[k];
    if !(variance > 0.0) {
        return Err(Error::DegenerateDensity { step: t, variance });
    }
    let log_weight = (0..k).map(|r| d.log_factor(r)).sum::<f64>() + d.log_m[k];
    Ok(InfoStateDensity {
        step: t,
        center: d.z_tilde[k],
        variance,
        log_weight,
    })
}

/// `E[exp{−½ D U² + l1 U − l2 V}]` for a Gaussian pair `(U, V)`.
#[allow(clippy::too_many_arguments)]
pub fn gaussian_pair_exp(m_u: f64, m_v: f64, g_u: f64, g_v: f64, g_uv: f64, d: f64, l1: f64, l2: f64) -> Result<f64> {
    let scale = 1.0 + d * g_u;
    if !(scale > 0.0) {
        return Err(Error::DomainError(format!("1 + D·γ_U = {scale} must be positive")));
    }
    let shifted = m_u - l2 * g_uv;
    let exponent = -l2 * m_v + 0.5 * l2 * l2 * g_v - 0.5 * d / scale * shifted * shifted
        + (l1 * l1 * g_u + 2.0 * l1 * shifted) / (2.0 * scale);
    Ok(scale.powf(-0.5) * exponent.exp())
}

/// Factorization for a general conditionally Gaussian pair, from the model's joint law.
pub fn cm_general(model: &GaussianModel, risk: &RiskSpec, y: &[f64], h: &[f64]) -> Result<CMDecomposition> {
    cm_general_joint(&assemble_joint(model)?, risk, y, h, 0)
}

/// Factorization for a scalar joint law of `(X, Y)`; `μ ≤ 0`. The result does
/// not depend on `aux_seed`, which only fixes the realized auxiliary observations.
pub fn cm_general_joint(joint: &JointGaussian, risk: &RiskSpec, y: &[f64], h: &[f64], aux_seed: u64) -> Result<CMDecomposition> {
    if joint.signal_dim() != 1 || joint.obs_dim() != 1 {
        return Err(Error::DimensionMismatch("general factorization needs scalar X and Y".into()));
    }
    let sys = AugmentedSystem::from_joint(joint, risk, h, y, aux_seed)?;
    let horizon = joint.horizon();
    let q: Vec<f64> = risk.q().iter().map(|v| -risk.mu() * v).collect();
    let mut out = CMDecomposition {
        mu: risk.mu(),
        log_i: Vec::with_capacity(horizon),
        log_m: Vec::with_capacity(horizon),
        log_m_step: Vec::with_capacity(horizon),
        nu: Vec::with_capacity(horizon),
        pi: Vec::with_capacity(horizon),
        gamma: Vec::with_capacity(horizon),
        gamma_bar: Vec::with_capacity(horizon),
        z_h: Vec::with_capacity(horizon),
        z_tilde: Vec::with_capacity(horizon),
        gamma_tilde: Vec::with_capacity(horizon),
        log_bracket: Vec::with_capacity(horizon),
        exponent: Vec::with_capacity(horizon),
    };
    let (mut log_m, mut log_prod) = (0.0, 0.0);
    for t in 0..horizon {
        let plain = sys.conditioned(t, 0)?;
        let (xi, yi) = (plain.x_index(t, 0), plain.y_index(t, 0));
        let (pi_y, sigma2) = (plain.mean[yi], plain.cov[(yi, yi)]);
        let pred = sys.predict(t)?;
        let tilde = sys.tilde(t)?;
        let obs = sys.observation(t)?;
        for v in [sigma2, obs.var] {
            if !(v > DEGENERATE_TOL) {
                return Err(Error::SingularConditioning { condition: f64::INFINITY });
            }
        }
        let gt = tilde.cov[(0, 0)];
        let zt = tilde.shifted_mean()[0];
        let scale = 1.0 + q[t] * gt;
        let bracket = -0.5 * scale.ln();
        let exponent = -0.5 * q[t] / scale * (h[t] - zt).powi(2);
        let v_bar = obs.mean - obs.cov_y_xi;
        let step = 0.5 * (sigma2 / obs.var).ln() + (y[t] - pi_y).powi(2) / (2.0 * sigma2)
            - (y[t] - v_bar).powi(2) / (2.0 * obs.var);
        log_m += step;
        log_prod += bracket + exponent;
        out.nu.push(y[t] - pi_y);
        out.pi.push(plain.mean[xi]);
        out.gamma.push(plain.cov[(xi, xi)]);
        out.gamma_bar.push(pred.cov[(0, 0)]);
        out.z_h.push(pred.shifted_mean()[0]);
        out.z_tilde.push(zt);
        out.gamma_tilde.push(gt);
        out.log_bracket.push(bracket);
        out.exponent.push(exponent);
        out.log_m_step.push(step);
        out.log_m.push(log_m);
        out.log_i.push(log_prod + log_m);
    }
    Ok(out)
}

/// Monte Carlo estimate of `E[M_T]` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MartingaleCheck {
    pub estimate: f64,
    pub stderr: f64,
    pub n_paths: usize,
}

/// `E[M_T]` over sampled trajectories, with `h` the LEG estimate along each path.
pub fn martingale_expectation_check(model: &GaussianModel, risk: &RiskSpec, n_paths: usize, seed: u64) -> Result<MartingaleCheck> {
    let f = filter::leg_affine(model, risk)?;
    martingale_expectation_check_with(model, risk, &f, n_paths, seed, Execution::default())
}

pub fn martingale_expectation_check_with(
    model: &GaussianModel,
    risk: &RiskSpec,
    estimate: &AffineFilter,
    n_paths: usize,
    seed: u64,
    exec: Execution,
) -> Result<MartingaleCheck> {
    if n_paths == 0 {
        return Err(Error::InvalidArgument("n_paths must be at least 1".into()));
    }
    let ctx = CmContext::new(model, risk)?;
    let sampler = model.sampler()?;
    let horizon = model.horizon();
    let batches = n_paths.div_ceil(BATCH);
    let partials = par::try_map_indexed(batches, exec, |b| -> Result<(CompensatedSum, CompensatedSum)> {
        let (mut s1, mut s2) = (CompensatedSum::default(), CompensatedSum::default());
        let (mut x, mut y, mut h, mut scratch) = (vec![0.0; horizon], vec![0.0; horizon], vec![0.0; horizon], Vec::new());
        for i in b * BATCH..((b + 1) * BATCH).min(n_paths) {
            draw(&sampler, seed, i, &mut x, &mut y, &mut scratch);
            estimate.apply_into(&y, &mut h);
            let m = ctx.log_martingale(&y, &h)?.exp();
            s1.add(m);
            s2.add(m * m);
        }
        Ok((s1, s2))
    })?;
    let (mut s1, mut s2) = (CompensatedSum::default(), CompensatedSum::default());
    for (a, b) in partials {
        s1.add(a.value());
        s2.add(b.value());
    }
    let n = n_paths as f64;
    let mean = s1.value() / n;
    let var = if n_paths > 1 {
        ((s2.value() - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(MartingaleCheck {
        estimate: mean,
        stderr: (var / n).sqrt(),
        n_paths,
    })
}

fn draw(sampler: &Sampler, seed: u64, i: usize, x: &mut [f64], y: &mut [f64], scratch: &mut Vec<f64>) {
    sampler.draw_into(seed, i as u64, x, y, scratch);
}

/// Exact `E[M_T]` when `h` is an affine filter. `log M_T` is then a quadratic
/// in `Y`; its coefficients are recovered from evaluations at `0`, `±e_i` and
/// `e_i + e_j`, and the expectation follows from the exponential-quadratic identity.
pub fn martingale_expectation_exact(model: &GaussianModel, risk: &RiskSpec, estimate: &AffineFilter) -> Result<f64> {
    let (form_d, form_b, constant) = martingale_quadratic(model, risk, estimate)?;
    let (mean, cov) = assemble_joint(model)?.y_block();
    Ok((constant + log_exp_quadratic(&mean, &cov, &form_d, &form_b)?).exp())
}

/// Coefficients `(D, b, c)` with `log M_T(y) = −½ yᵀ D y + bᵀ y + c`.
pub fn martingale_quadratic(
    model: &GaussianModel,
    risk: &RiskSpec,
    estimate: &AffineFilter,
) -> Result<(nalgebra::DMatrix<f64>, DVector<f64>, f64)> {
    let ctx = CmContext::new(model, risk)?;
    let horizon = model.horizon();
    let f = |y: &[f64]| ctx.log_martingale(y, &estimate.apply(y));
    let basis = |i: usize, sign: f64| {
        let mut v = vec![0.0; horizon];
        v[i] = sign;
        v
    };
    let f0 = f(&vec![0.0; horizon])?;
    let mut plus = vec![0.0; horizon];
    let mut minus = vec![0.0; horizon];
    for i in 0..horizon {
        plus[i] = f(&basis(i, 1.0))?;
        minus[i] = f(&basis(i, -1.0))?;
    }
    let mut d = nalgebra::DMatrix::zeros(horizon, horizon);
    let mut b = DVector::zeros(horizon);
    for i in 0..horizon {
        d[(i, i)] = -(plus[i] + minus[i] - 2.0 * f0);
        b[i] = 0.5 * (plus[i] - minus[i]);
        for j in 0..i {
            let mut v = basis(i, 1.0);
            v[j] = 1.0;
            let dij = -(f(&v)? - plus[i] - plus[j] + f0);
            d[(i, j)] = dij;
            d[(j, i)] = dij;
        }
    }
    Ok((d, b, f0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::LowerTri;
    use crate::oracle::{conditional_exp_quadratic, gauss_hermite};

    fn toy() -> GaussianModel {
        GaussianModel::ar1(&[0.8, 1.1, 0.5], &[1.0, 0.5, 2.0], 0.3, &[1.0, 0.7, 1.3]).unwrap()
    }

    #[test]
    fn zero_weights_are_trivial() {
        let risk = RiskSpec::scalar(-1.0, vec![0.0; 3]).unwrap();
        let d = cm_decompose(&toy(), &risk, &[0.4, -1.0, 2.0], &[0.0, 0.3, 1.0]).unwrap();
        assert!(d.log_i.iter().chain(&d.log_m).chain(&d.exponent).all(|&v| v == 0.0));
        assert_eq!(d.gamma, d.gamma_bar);
    }

    #[test]
    fn matches_oracle() {
        let model = toy();
        let risk = RiskSpec::scalar(-1.0, vec![1.0, 0.5, 2.0]).unwrap();
        let y = [0.4, -1.0, 2.0];
        let h = [0.2, 0.1, -0.7];
        let d = cm_decompose(&model, &risk, &y, &h).unwrap();
        let joint = assemble_joint(&model).unwrap();
        let direct = conditional_exp_quadratic(&joint, &y, &risk, &h).unwrap();
        assert!((d.i_final() - direct).abs() < 1e-10);
        let g = cm_general(&model, &risk, &y, &h).unwrap();
        assert!((g.log_i_final() - d.log_i_final()).abs() < 1e-10);
        assert!((g.log_m_final() - d.log_m_final()).abs() < 1e-10);
    }

    #[test]
    fn general_form_independent_of_aux_draw() {
        let joint = assemble_joint(&toy()).unwrap();
        let risk = RiskSpec::scalar(-0.7, vec![1.0, 0.5, 2.0]).unwrap();
        let (y, h) = ([0.4, -1.0, 2.0], [0.2, 0.1, -0.7]);
        let a = cm_general_joint(&joint, &risk, &y, &h, 1).unwrap();
        let b = cm_general_joint(&joint, &risk, &y, &h, 99).unwrap();
        assert!((a.log_i_final() - b.log_i_final()).abs() < 1e-10);
    }

    #[test]
    fn info_state_first_step() {
        let model = toy();
        let risk = RiskSpec::scalar(-1.0, vec![1.0, 0.5, 2.0]).unwrap();
        let y = [0.4, -1.0, 2.0];
        let s = info_state(&model, &risk, &y, &[0.0; 3], 1).unwrap();
        let (m, k, a) = model.scalar_parts().unwrap();
        let g = *k.get(0, 0);
        assert!((s.center - (m[0] + a[0] * g * y[0]) / (1.0 + a[0] * a[0] * g)).abs() < 1e-14);
        assert_eq!(s.log_weight, 0.0);
    }

    #[test]
    fn pair_identity_reduces_to_mgf() {
        let (mu, mv, gu, gv, guv, l1, l2) = (0.3, -0.2, 1.5, 0.8, 0.4, 0.7, -0.4);
        let v = gaussian_pair_exp(mu, mv, gu, gv, guv, 0.0, l1, l2).unwrap();
        let mgf = (l1 * mu - l2 * mv + 0.5 * (l1 * l1 * gu + l2 * l2 * gv) - l1 * l2 * guv).exp();
        assert!((v - mgf).abs() < 1e-13);
        assert_eq!(gaussian_pair_exp(0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0).unwrap(), 1.0);
        assert!(gaussian_pair_exp(0.0, 0.0, 1.0, 1.0, 0.0, -2.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn exact_martingale_mean_is_one() {
        let model = GaussianModel::general(vec![0.2, -0.1], LowerTri::from_rows(vec![vec![1.0], vec![0.6, 1.4]]).unwrap(), vec![1.2, 0.8])
            .unwrap();
        let risk = RiskSpec::scalar(-1.0, vec![1.0, 1.5]).unwrap();
        let f = filter::leg_affine(&model, &risk).unwrap();
        let exact = martingale_expectation_exact(&model, &risk, &f).unwrap();
        assert!((exact - 1.0).abs() < 1e-9);
        // Independent route: tensor Gauss–Hermite over the law of Y.
        let (mean, cov) = assemble_joint(&model).unwrap().y_block();
        let l = cov.cholesky().unwrap().l();
        let ctx = CmContext::new(&model, &risk).unwrap();
        let (nodes, weights) = gauss_hermite(60);
        let mut total = 0.0;
        for (z1, w1) in nodes.iter().zip(&weights) {
            for (z2, w2) in nodes.iter().zip(&weights) {
                let y = &mean + &l * DVector::from_column_slice(&[*z1, *z2]);
                let y = y.as_slice();
                total += w1 * w2 * ctx.log_martingale(y, &f.apply(y)).unwrap().exp();
            }
        }
        assert!((total - 1.0).abs() < 1e-8);
    }
}
