use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{check_psd, guarded_spd_solve, psd_factor, symmetrize};
use crate::model::{GaussianModel, RiskSpec};

/// Variance (relative to the largest diagonal entry, floored at one) below
/// which an observed coordinate is treated as degenerate and dropped.
pub const DEGENERATE_TOL: f64 = 1e-14;

/// Coordinate label; `t` is 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Label {
    X { t: usize, comp: usize },
    Y { t: usize, comp: usize },
    Y2 { t: usize, comp: usize },
}

/// A finite-dimensional Gaussian vector laid out as `X` (`T·n`), `Y` (`T·m`)
/// and optionally `Y²` (`T·n`) blocks, step-major.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub labels: Vec<Label>,
    horizon: usize,
    n: usize,
    m: usize,
    has_aux: bool,
    /// Coordinates fixed by conditioning.
    pub observed: Vec<usize>,
    /// Observed coordinates skipped because their variance was zero.
    pub dropped: Vec<usize>,
}

impl JointGaussian {
    /// Joint law of `(X, Y)` with `n = m = 1` from an arbitrary mean and covariance.
    pub fn scalar_pair(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if !mean.len().is_multiple_of(2) || cov.shape() != (mean.len(), mean.len()) {
            return Err(Error::DimensionMismatch(
                "pair law needs an even dimension with matching covariance".into(),
            ));
        }
        let horizon = mean.len() / 2;
        Self::new(mean, cov, horizon, 1, 1, false)
    }

    pub(crate) fn new(
        mean: DVector<f64>,
        mut cov: DMatrix<f64>,
        horizon: usize,
        n: usize,
        m: usize,
        has_aux: bool,
    ) -> Result<Self> {
        let asym = (&cov - cov.transpose()).amax();
        if asym > 1e-12 * cov.amax().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "joint covariance is not symmetric (max asymmetry {asym:e})"
            )));
        }
        symmetrize(&mut cov);
        check_psd(&cov)?;
        let mut labels = Vec::with_capacity(mean.len());
        labels.extend((0..horizon * n).map(|i| Label::X { t: i / n, comp: i % n }));
        labels.extend((0..horizon * m).map(|i| Label::Y { t: i / m, comp: i % m }));
        if has_aux {
            labels.extend((0..horizon * n).map(|i| Label::Y2 { t: i / n, comp: i % n }));
        }
        if labels.len() != mean.len() {
            return Err(Error::DimensionMismatch("joint layout does not match its dimension".into()));
        }
        Ok(Self {
            mean,
            cov,
            labels,
            horizon,
            n,
            m,
            has_aux,
            observed: Vec::new(),
            dropped: Vec::new(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn signal_dim(&self) -> usize {
        self.n
    }

    pub fn obs_dim(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn x_index(&self, t: usize, comp: usize) -> usize {
        t * self.n + comp
    }

    pub fn y_index(&self, t: usize, comp: usize) -> usize {
        self.horizon * self.n + t * self.m + comp
    }

    pub fn y2_index(&self, t: usize, comp: usize) -> usize {
        debug_assert!(self.has_aux);
        self.horizon * (self.n + self.m) + t * self.n + comp
    }

    /// Indices of `Y_1..Y_k`.
    pub fn y_prefix(&self, k: usize) -> Vec<usize> {
        (0..k * self.m).map(|i| self.horizon * self.n + i).collect()
    }

    /// Indices of `Y²_1..Y²_k`.
    pub fn y2_prefix(&self, k: usize) -> Vec<usize> {
        (0..k * self.n).map(|i| self.horizon * (self.n + self.m) + i).collect()
    }

    pub fn x_block(&self) -> (DVector<f64>, DMatrix<f64>) {
        let nx = self.horizon * self.n;
        (
            self.mean.rows(0, nx).into_owned(),
            self.cov.view((0, 0), (nx, nx)).into_owned(),
        )
    }

    pub fn y_block(&self) -> (DVector<f64>, DMatrix<f64>) {
        let start = self.horizon * self.n;
        let ny = self.horizon * self.m;
        (
            self.mean.rows(start, ny).into_owned(),
            self.cov.view((start, start), (ny, ny)).into_owned(),
        )
    }

    /// Conditional law given `coords = values`. Observed coordinates keep
    /// their value as mean and get zero variance; degenerate ones are
    /// dropped from the solve and recorded.
    pub fn condition(&self, coords: &[usize], values: &[f64]) -> Result<JointGaussian> {
        if coords.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} coordinates but {} values",
                coords.len(),
                values.len()
            )));
        }
        if let Some(&bad) = coords.iter().find(|&&i| i >= self.dim()) {
            return Err(Error::DimensionMismatch(format!("coordinate {bad} out of range")));
        }
        let scale = self.cov.diagonal().iter().copied().fold(1.0, f64::max);
        let mut keep = Vec::new();
        let mut keep_values = Vec::new();
        let mut dropped = self.dropped.clone();
        for (&i, &v) in coords.iter().zip(values) {
            if self.cov[(i, i)] <= DEGENERATE_TOL * scale {
                if !self.observed.contains(&i) {
                    dropped.push(i);
                }
            } else {
                keep.push(i);
                keep_values.push(v);
            }
        }
        let mut out = self.clone();
        if !keep.is_empty() {
            let k = keep.len();
            let dim = self.dim();
            let s_oo = DMatrix::from_fn(k, k, |a, b| self.cov[(keep[a], keep[b])]);
            let mut rhs = DMatrix::zeros(k, dim + 1);
            for a in 0..k {
                for j in 0..dim {
                    rhs[(a, j)] = self.cov[(keep[a], j)];
                }
                rhs[(a, dim)] = keep_values[a] - self.mean[keep[a]];
            }
            let sol = guarded_spd_solve(&s_oo, &rhs).map_err(|condition| Error::SingularConditioning { condition })?;
            // Σ_{·O} Σ_OO^{-1} [Σ_{O·} | v − m_O]
            let s_ao = DMatrix::from_fn(dim, k, |i, a| self.cov[(i, keep[a])]);
            let update = &s_ao * sol;
            for i in 0..dim {
                out.mean[i] += update[(i, dim)];
            }
            out.cov -= update.columns(0, dim);
            symmetrize(&mut out.cov);
        }
        for (&i, &v) in coords.iter().zip(values) {
            out.mean[i] = v;
            out.cov.row_mut(i).fill(0.0);
            out.cov.column_mut(i).fill(0.0);
            if !out.observed.contains(&i) {
                out.observed.push(i);
            }
        }
        out.dropped = dropped;
        Ok(out)
    }

    /// Conditions on `Y_1..Y_k` with `y` of length `k·m`.
    pub fn condition_on_y(&self, y: &[f64]) -> Result<JointGaussian> {
        if !y.len().is_multiple_of(self.m) || y.len() > self.horizon * self.m {
            return Err(Error::DimensionMismatch(format!("{} observation values", y.len())));
        }
        self.condition(&self.y_prefix(y.len() / self.m), y)
    }
}

/// Joint law of `(X_1..X_T, Y_1..Y_T)` for a model.
pub fn assemble_joint(model: &GaussianModel) -> Result<JointGaussian> {
    let (mean, cov) = joint_moments(model);
    JointGaussian::new(mean, cov, model.horizon(), model.signal_dim(), model.obs_dim(), false)
}

/// Mean and covariance of `(X, Y)` obtained from `(X, ε)` by the map `Y = A X + ε`.
pub(crate) fn joint_moments(model: &GaussianModel) -> (DVector<f64>, DMatrix<f64>) {
    let horizon = model.horizon();
    let n = model.signal_dim();
    let m = model.obs_dim();
    let nx = horizon * n;
    let ny = horizon * m;
    let base = model.noise_joint_cov();
    let map = observation_map(model);
    let cov = &map * base * map.transpose();
    let mut mean = DVector::zeros(nx + ny);
    for t in 0..horizon {
        mean.rows_mut(t * n, n).copy_from(&model.mean()[t]);
        let my = &model.gains()[t] * &model.mean()[t];
        mean.rows_mut(nx + t * m, m).copy_from(&my);
    }
    (mean, cov)
}

/// `[[I, 0], [blockdiag(A_t), I]]`.
fn observation_map(model: &GaussianModel) -> DMatrix<f64> {
    let horizon = model.horizon();
    let n = model.signal_dim();
    let m = model.obs_dim();
    let nx = horizon * n;
    let ny = horizon * m;
    let mut map = DMatrix::identity(nx + ny, nx + ny);
    for t in 0..horizon {
        map.view_mut((nx + t * m, t * n), (m, n)).copy_from(&model.gains()[t]);
    }
    map
}

/// `log E exp(−½ eᵀ D e + bᵀ e)` for `e ~ N(mean, cov)`:
/// with `cov = L Lᵀ`, `B = Lᵀ D L` and `g = Lᵀ(b − D mean)`, the value is
/// `−½ meanᵀ D mean + bᵀ mean − ½ log det(I + B) + ½ gᵀ (I + B)^{-1} g`.
pub fn log_exp_quadratic(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    d: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<f64> {
    let dim = mean.len();
    if cov.shape() != (dim, dim) || d.shape() != (dim, dim) || b.len() != dim {
        return Err(Error::DimensionMismatch("exp-quadratic operands".into()));
    }
    let l = psd_factor(cov);
    let mut inner = l.transpose() * d * &l;
    symmetrize(&mut inner);
    for i in 0..dim {
        inner[(i, i)] += 1.0;
    }
    let g = l.transpose() * (b - d * mean);
    let eig = inner.symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::TransformDiverges { min_eigenvalue: min });
    }
    let logdet: f64 = eig.eigenvalues.iter().map(|v| v.ln()).sum();
    let proj = eig.eigenvectors.transpose() * g;
    let quad: f64 = proj.iter().zip(eig.eigenvalues.iter()).map(|(p, v)| p * p / v).sum();
    Ok(-0.5 * (mean.transpose() * d * mean)[(0, 0)] + b.dot(mean) - 0.5 * logdet + 0.5 * quad)
}

/// Quadratic criterion `(μ/2) Σ_t Q_t |P_t e − c_t|²`-style terms in the
/// form `−½ eᵀ D e + bᵀ e + const`.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    pub d: DMatrix<f64>,
    pub b: DVector<f64>,
    pub constant: f64,
}

impl QuadraticForm {
    pub fn zeros(dim: usize) -> Self {
        Self {
            d: DMatrix::zeros(dim, dim),
            b: DVector::zeros(dim),
            constant: 0.0,
        }
    }

    /// Adds `(μ/2) w (vᵀ e − c)²`.
    pub fn add_square(&mut self, mu: f64, w: f64, v: &DVector<f64>, c: f64) {
        if w == 0.0 {
            return;
        }
        self.d -= v * v.transpose() * (mu * w);
        self.b -= v * (mu * w * c);
        self.constant += 0.5 * mu * w * c * c;
    }

    /// Adds `(μ/2) (u − c)ᵀ W (u − c)` where `u = P e` for a selection matrix `P` given by `coords`.
    pub fn add_block(&mut self, mu: f64, w: &DMatrix<f64>, coords: &[usize], c: &DVector<f64>) {
        let k = coords.len();
        for a in 0..k {
            for bb in 0..k {
                let wab = w[(a, bb)];
                if wab == 0.0 {
                    continue;
                }
                self.d[(coords[a], coords[bb])] -= mu * wab;
                self.b[coords[a]] -= mu * wab * c[bb];
                self.constant += 0.5 * mu * wab * c[a] * c[bb];
            }
        }
    }

    pub fn log_expectation(&self, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
        Ok(self.constant + log_exp_quadratic(mean, cov, &self.d, &self.b)?)
    }
}

/// `log E[exp{(μ/2) Σ_t (X_t − h_t)ᵀ Q_t (X_t − h_t)} | Y_1..Y_k]`, with `y` the
/// first `k·m` observations and `h` flat (`T·n`).
pub fn log_conditional_exp_quadratic(joint: &JointGaussian, y: &[f64], risk: &RiskSpec, h: &[f64]) -> Result<f64> {
    log_conditional_penalized(joint, y, risk, h, None)
}

fn log_conditional_penalized(
    joint: &JointGaussian,
    y: &[f64],
    risk: &RiskSpec,
    h: &[f64],
    penalty: Option<&[f64]>,
) -> Result<f64> {
    let n = joint.signal_dim();
    let horizon = joint.horizon();
    if h.len() != horizon * n || risk.horizon() != horizon {
        return Err(Error::DimensionMismatch("criterion does not match the joint law".into()));
    }
    let cond = joint.condition_on_y(y)?;
    let (mean, cov) = cond.x_block();
    let mut form = QuadraticForm::zeros(horizon * n);
    for t in 0..horizon {
        let coords: Vec<usize> = (0..n).map(|c| t * n + c).collect();
        form.add_block(risk.mu(), risk.weight(t), &coords, &DVector::from_column_slice(&h[t * n..(t + 1) * n]));
        if let Some(r) = penalty {
            let mut v = DVector::zeros(horizon * n);
            v[t * n] = 1.0;
            form.add_square(risk.mu(), r[t], &v, 0.0);
        }
    }
    form.log_expectation(&mean, &cov)
}

/// The conditional Laplace transform `I` itself.
pub fn conditional_exp_quadratic(joint: &JointGaussian, y: &[f64], risk: &RiskSpec, h: &[f64]) -> Result<f64> {
    Ok(log_conditional_exp_quadratic(joint, y, risk, h)?.exp())
}

/// Minimizer over `g` of `E[μ exp{(μ/2)(Σ_{s<t} Q_s (X_s − h_s)² + Q_t (X_t − g)²)} | Y_1..Y_t]`
/// for a scalar joint law. The log of the conditional expectation is exactly
/// quadratic in `g`, so three evaluations determine the minimizer.
pub fn rs_step_minimizer(joint: &JointGaussian, y: &[f64], risk: &RiskSpec, h_prefix: &[f64], t: usize) -> Result<f64> {
    rs_step_minimizer_penalized(joint, y, risk, h_prefix, t, None)
}

/// As [`rs_step_minimizer`] with an extra `(μ/2) Σ_{s<=t} R_s X_s²` term.
pub fn rs_step_minimizer_penalized(
    joint: &JointGaussian,
    y: &[f64],
    risk: &RiskSpec,
    h_prefix: &[f64],
    t: usize,
    penalty: Option<&[f64]>,
) -> Result<f64> {
    if joint.signal_dim() != 1 || joint.obs_dim() != 1 {
        return Err(Error::DimensionMismatch("step minimizer needs a scalar joint law".into()));
    }
    let horizon = joint.horizon();
    if t >= horizon || h_prefix.len() < t || y.len() < t + 1 {
        return Err(Error::DimensionMismatch("step index out of range".into()));
    }
    let q = risk.q();
    let truncated: Vec<f64> = (0..horizon).map(|s| if s <= t { q[s] } else { 0.0 }).collect();
    let trisk = RiskSpec::scalar(risk.mu(), truncated)?;
    let tpen: Option<Vec<f64>> = match penalty {
        Some(r) if r.len() != horizon => return Err(Error::DimensionMismatch("signal penalty length".into())),
        Some(r) => Some((0..horizon).map(|s| if s <= t { r[s] } else { 0.0 }).collect()),
        None => None,
    };
    let value = |g: f64| -> Result<f64> {
        let mut h = vec![0.0; horizon];
        h[..t].copy_from_slice(&h_prefix[..t]);
        h[t] = g;
        log_conditional_penalized(joint, &y[..t + 1], &trisk, &h, tpen.as_deref())
    };
    let (f0, fp, fm) = (value(0.0)?, value(1.0)?, value(-1.0)?);
    let curvature = fp + fm - 2.0 * f0;
    let slope = 0.5 * (fp - fm);
    if curvature == 0.0 {
        return Err(Error::DomainError("flat conditional criterion".into()));
    }
    // μ exp(f) is minimized where f is extremal in the direction set by sign(μ).
    Ok(-slope / curvature)
}
