//! Signal–observation models `Y_t = A_t X_t + ε_t` with a Gaussian signal.
//!
//! A [`GaussianModel`] always stores blocks: `n x n` covariance blocks,
//! `m x n` gains and optional `n x m` signal/noise cross-covariances. The
//! scalar model of the filtering theory is the `n = m = 1` case and exposes
//! convenience accessors returning plain `f64` sequences.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{check_psd, jittered_cholesky, scalar_mat, LowerTri};
use crate::par::{self, Execution};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    horizon: usize,
    signal_dim: usize,
    obs_dim: usize,
    mean: Vec<DVector<f64>>,
    cov: LowerTri<DMatrix<f64>>,
    gains: Vec<DMatrix<f64>>,
    /// `E (X_t − m_t) ε_sᵀ` for `s <= t`; the noise is white and never
    /// correlated with past signal values, so entries with `s > t` are zero.
    cross_cov: Option<LowerTri<DMatrix<f64>>>,
}

impl GaussianModel {
    /// Scalar model from a mean sequence, a lower-triangular kernel and gains.
    pub fn general(mean: Vec<f64>, cov: LowerTri<f64>, gains: Vec<f64>) -> Result<Self> {
        let horizon = mean.len();
        if cov.horizon() != horizon || gains.len() != horizon {
            return Err(Error::DimensionMismatch(format!(
                "mean has {} steps, covariance {} and gains {}",
                horizon,
                cov.horizon(),
                gains.len()
            )));
        }
        Self::vector(
            mean.into_iter().map(|v| DVector::from_element(1, v)).collect(),
            cov.map(|&v| scalar_mat(v)),
            gains.into_iter().map(scalar_mat).collect(),
            None,
        )
    }

    /// AR(1) signal `X_t = a_t X_{t−1} + D_t^{1/2} ε̃_t` with `X_0 = x0`.
    pub fn ar1(a: &[f64], d: &[f64], x0: f64, gains: &[f64]) -> Result<Self> {
        let horizon = a.len();
        if d.len() != horizon || gains.len() != horizon {
            return Err(Error::DimensionMismatch(format!(
                "AR(1) coefficients have {} steps, D {} and gains {}",
                horizon,
                d.len(),
                gains.len()
            )));
        }
        if let Some((t, &value)) = d.iter().enumerate().find(|(_, &v)| v < 0.0 || !v.is_finite()) {
            return Err(Error::NegativeVariance { step: t + 1, value });
        }
        let (mean, cov) = ar1_moments(a, d, x0);
        Self::general(mean, cov, gains.to_vec())
    }

    /// MA(1) signal `X_t = ε̃_t + λ ε̃_{t−1}`.
    pub fn ma1(lambda: f64, gains: &[f64]) -> Result<Self> {
        let horizon = gains.len();
        let cov = ma1_kernel(lambda, horizon);
        Self::general(vec![0.0; horizon], cov, gains.to_vec())
    }

    /// Vector model with `n`-dimensional signal and `m`-dimensional observations.
    pub fn vector(
        mean: Vec<DVector<f64>>,
        cov: LowerTri<DMatrix<f64>>,
        gains: Vec<DMatrix<f64>>,
        cross_cov: Option<LowerTri<DMatrix<f64>>>,
    ) -> Result<Self> {
        let horizon = mean.len();
        if horizon == 0 {
            return Err(Error::DimensionMismatch("horizon must be positive".into()));
        }
        let n = mean[0].len();
        let m = gains.first().map(|g| g.nrows()).unwrap_or(0);
        if n == 0 || m == 0 {
            return Err(Error::DimensionMismatch("empty signal or observation".into()));
        }
        if cov.horizon() != horizon || gains.len() != horizon {
            return Err(Error::DimensionMismatch(format!(
                "mean has {} steps, covariance {} and gains {}",
                horizon,
                cov.horizon(),
                gains.len()
            )));
        }
        for t in 0..horizon {
            if mean[t].len() != n {
                return Err(mismatch("mean", t, (n, 1), (mean[t].len(), 1)));
            }
            if gains[t].shape() != (m, n) {
                return Err(mismatch("gain", t, (m, n), gains[t].shape()));
            }
            for s in 0..=t {
                if cov.get(t, s).shape() != (n, n) {
                    return Err(mismatch("covariance block", t, (n, n), cov.get(t, s).shape()));
                }
            }
        }
        if let Some(cc) = &cross_cov {
            if cc.horizon() != horizon {
                return Err(Error::DimensionMismatch(format!(
                    "cross-covariance has {} steps, expected {}",
                    cc.horizon(),
                    horizon
                )));
            }
            for t in 0..horizon {
                for s in 0..=t {
                    if cc.get(t, s).shape() != (n, m) {
                        return Err(mismatch("cross-covariance block", t, (n, m), cc.get(t, s).shape()));
                    }
                }
            }
        }
        let all_finite = mean.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && gains.iter().all(|g| g.iter().all(|x| x.is_finite()))
            && (0..horizon).all(|t| (0..=t).all(|s| cov.get(t, s).iter().all(|x| x.is_finite())))
            && cross_cov.as_ref().is_none_or(|cc| {
                (0..horizon).all(|t| (0..=t).all(|s| cc.get(t, s).iter().all(|x| x.is_finite())))
            });
        if !all_finite {
            return Err(Error::InvalidArgument("model parameters must be finite".into()));
        }
        let model = Self {
            horizon,
            signal_dim: n,
            obs_dim: m,
            mean,
            cov,
            gains,
            cross_cov,
        };
        check_psd(&model.noise_joint_cov())?;
        Ok(model)
    }

    /// MA(1) signal observed through MA(1) noise:
    /// `X_t = ε̃_t + λ ε̃_{t−1}`, `Y_t = α_t X_t + ε_t + β ε_{t−1}`.
    ///
    /// The state is `(X_t, ε_{t−1})`, the gain `(α_t, β)` and the white
    /// observation noise `ε_t`, which reappears in the next state.
    pub fn ma1_observation(lambda: f64, alpha: &[f64], beta: f64) -> Result<Self> {
        let horizon = alpha.len();
        let kx = ma1_kernel(lambda, horizon);
        let cov = LowerTri::from_fn(horizon, |t, s| {
            DMatrix::from_row_slice(2, 2, &[*kx.get(t, s), 0.0, 0.0, if s == t { 1.0 } else { 0.0 }])
        });
        let cross = LowerTri::from_fn(horizon, |t, s| {
            DMatrix::from_column_slice(2, 1, &[0.0, if s + 1 == t { 1.0 } else { 0.0 }])
        });
        let gains = alpha
            .iter()
            .map(|&a| DMatrix::from_row_slice(1, 2, &[a, beta]))
            .collect();
        Self::vector(vec![DVector::zeros(2); horizon], cov, gains, Some(cross))
    }

    /// AR(1) signal observed through AR(1) noise:
    /// `X_t = a_t X_{t−1} + D_t^{1/2} ε'_t`, `Y_t = α_t X_t + ε_t`,
    /// `ε_t = b ε_{t−1} + ε̃_t`, with `X_0 = ε_0 = 0`.
    ///
    /// The state is `(X_t, ε_{t−1})`, the gain `(α_t, b)` and the white
    /// observation noise `ε̃_t`.
    pub fn ar1_observation_noise(a: &[f64], d: &[f64], alpha: &[f64], b: f64) -> Result<Self> {
        let horizon = a.len();
        if d.len() != horizon || alpha.len() != horizon {
            return Err(Error::DimensionMismatch(format!(
                "AR(1) coefficients have {} steps, D {} and gains {}",
                horizon,
                d.len(),
                alpha.len()
            )));
        }
        if let Some((t, &value)) = d.iter().enumerate().find(|(_, &v)| v < 0.0 || !v.is_finite()) {
            return Err(Error::NegativeVariance { step: t + 1, value });
        }
        let (_, kx) = ar1_moments(a, d, 0.0);
        // ε_{t−1} for t = 1..T is an AR(1) with unit innovations started at ε_0 = 0.
        let mut noise_var = vec![0.0; horizon];
        for t in 1..horizon {
            noise_var[t] = b * b * noise_var[t - 1] + 1.0;
        }
        let cov = LowerTri::from_fn(horizon, |t, s| {
            let ke = b.powi((t - s) as i32) * noise_var[s];
            DMatrix::from_row_slice(2, 2, &[*kx.get(t, s), 0.0, 0.0, ke])
        });
        // Cov(ε_{t−1}, ε̃_s) = b^{t−1−s} for s <= t − 1.
        let cross = LowerTri::from_fn(horizon, |t, s| {
            let v = if s < t { b.powi((t - 1 - s) as i32) } else { 0.0 };
            DMatrix::from_column_slice(2, 1, &[0.0, v])
        });
        let gains = alpha
            .iter()
            .map(|&al| DMatrix::from_row_slice(1, 2, &[al, b]))
            .collect();
        Self::vector(vec![DVector::zeros(2); horizon], cov, gains, Some(cross))
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn signal_dim(&self) -> usize {
        self.signal_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn is_scalar(&self) -> bool {
        self.signal_dim == 1 && self.obs_dim == 1
    }

    pub fn mean(&self) -> &[DVector<f64>] {
        &self.mean
    }

    pub fn cov(&self) -> &LowerTri<DMatrix<f64>> {
        &self.cov
    }

    pub fn gains(&self) -> &[DMatrix<f64>] {
        &self.gains
    }

    pub fn cross_cov(&self) -> Option<&LowerTri<DMatrix<f64>>> {
        self.cross_cov.as_ref()
    }

    /// Cross-covariance block `K_Xε(t, s)`, zero when absent or `s > t`.
    pub fn cross_block(&self, t: usize, s: usize) -> DMatrix<f64> {
        match &self.cross_cov {
            Some(cc) if s <= t => cc.get(t, s).clone(),
            _ => DMatrix::zeros(self.signal_dim, self.obs_dim),
        }
    }

    /// Covariance block `K(t, s)` for any ordering of `t, s`.
    pub fn cov_block(&self, t: usize, s: usize) -> DMatrix<f64> {
        if s <= t {
            self.cov.get(t, s).clone()
        } else {
            self.cov.get(s, t).transpose()
        }
    }

    fn require_scalar(&self) -> Result<()> {
        if self.is_scalar() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "operation needs a scalar model, got n={} m={}",
                self.signal_dim, self.obs_dim
            )))
        }
    }

    /// Scalar views `(m, K, A)`; errors for vector models or when a cross-covariance is present.
    pub fn scalar_parts(&self) -> Result<(Vec<f64>, LowerTri<f64>, Vec<f64>)> {
        self.require_scalar()?;
        if self.cross_cov.is_some() {
            return Err(Error::InvalidArgument(
                "scalar recursions assume independent signal and noise".into(),
            ));
        }
        Ok((
            self.mean.iter().map(|v| v[0]).collect(),
            self.cov.map(|b| b[(0, 0)]),
            self.gains.iter().map(|g| g[(0, 0)]).collect(),
        ))
    }

    /// Full symmetric signal covariance, `(T·n) x (T·n)`.
    pub fn signal_cov_matrix(&self) -> DMatrix<f64> {
        self.cov.to_symmetric_blocks(self.signal_dim)
    }

    /// Joint covariance of `(X, ε)` stacked over time.
    pub(crate) fn noise_joint_cov(&self) -> DMatrix<f64> {
        let nx = self.horizon * self.signal_dim;
        let ne = self.horizon * self.obs_dim;
        let mut joint = DMatrix::zeros(nx + ne, nx + ne);
        joint.view_mut((0, 0), (nx, nx)).copy_from(&self.signal_cov_matrix());
        for i in 0..ne {
            joint[(nx + i, nx + i)] = 1.0;
        }
        if let Some(cc) = &self.cross_cov {
            let c = cc.to_lower_blocks(self.signal_dim, self.obs_dim);
            joint.view_mut((0, nx), (nx, ne)).copy_from(&c);
            joint.view_mut((nx, 0), (ne, nx)).copy_from(&c.transpose());
        }
        joint
    }

    /// Model truncated to the first `horizon` steps.
    pub fn truncate(&self, horizon: usize) -> Result<Self> {
        if horizon == 0 || horizon > self.horizon {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate horizon {} to {}",
                self.horizon, horizon
            )));
        }
        Self::vector(
            self.mean[..horizon].to_vec(),
            self.cov.truncate(horizon),
            self.gains[..horizon].to_vec(),
            self.cross_cov.as_ref().map(|c| c.truncate(horizon)),
        )
    }

    pub fn sampler(&self) -> Result<Sampler> {
        Sampler::new(self)
    }

    /// Draws `n_paths` trajectories; path `i` depends only on `(seed, i)`.
    pub fn sample(&self, seed: u64, n_paths: usize) -> Result<Vec<Trajectory>> {
        self.sample_with(seed, n_paths, Execution::default())
    }

    pub fn sample_with(&self, seed: u64, n_paths: usize, exec: Execution) -> Result<Vec<Trajectory>> {
        if n_paths == 0 {
            return Ok(Vec::new());
        }
        let sampler = self.sampler()?;
        Ok(par::map_indexed(n_paths, exec, |i| sampler.trajectory(seed, i as u64)))
    }
}

fn mismatch(what: &str, t: usize, expected: (usize, usize), got: (usize, usize)) -> Error {
    Error::DimensionMismatch(format!(
        "{what} at step {} is {}x{}, expected {}x{}",
        t + 1,
        got.0,
        got.1,
        expected.0,
        expected.1
    ))
}

/// Mean and kernel of the AR(1) recursion: `m_t = Λ_t x0`,
/// `K(t, s) = (∏_{u=s+1}^t a_u) k_s`, `k_t = a_t² k_{t−1} + D_t`.
pub(crate) fn ar1_moments(a: &[f64], d: &[f64], x0: f64) -> (Vec<f64>, LowerTri<f64>) {
    let horizon = a.len();
    let mut mean = Vec::with_capacity(horizon);
    let mut k = Vec::with_capacity(horizon);
    let (mut m_prev, mut k_prev) = (x0, 0.0);
    for t in 0..horizon {
        m_prev *= a[t];
        k_prev = a[t] * a[t] * k_prev + d[t];
        mean.push(m_prev);
        k.push(k_prev);
    }
    let cov = LowerTri::from_fn(horizon, |t, s| {
        let transfer: f64 = a[s + 1..=t].iter().product();
        transfer * k[s]
    });
    (mean, cov)
}

fn ma1_kernel(lambda: f64, horizon: usize) -> LowerTri<f64> {
    LowerTri::from_fn(horizon, |t, s| match t - s {
        0 => 1.0 + lambda * lambda,
        1 => lambda,
        _ => 0.0,
    })
}

/// Risk parameter `μ` and nonnegative weights `Q_t` (`n x n` PSD blocks).
#[derive(Debug, Clone, PartialEq)]
pub struct RiskSpec {
    mu: f64,
    weights: Vec<DMatrix<f64>>,
}

impl RiskSpec {
    pub fn scalar(mu: f64, q: Vec<f64>) -> Result<Self> {
        if let Some((t, &v)) = q.iter().enumerate().find(|(_, &v)| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "weight Q_{} = {} must be finite and nonnegative",
                t + 1,
                v
            )));
        }
        Self::matrix(mu, q.into_iter().map(scalar_mat).collect())
    }

    pub fn matrix(mu: f64, weights: Vec<DMatrix<f64>>) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::InvalidArgument("μ must be finite".into()));
        }
        for (t, w) in weights.iter().enumerate() {
            if !w.is_square() || w.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(format!("weight Q_{} must be a finite square matrix", t + 1)));
            }
            check_psd(w).map_err(|_| {
                Error::InvalidArgument(format!("weight Q_{} must be positive semidefinite", t + 1))
            })?;
        }
        Ok(Self { mu, weights })
    }

    /// Weight `q_t` on the first signal component only, for `n`-dimensional states.
    pub fn first_component(mu: f64, q: Vec<f64>, n: usize) -> Result<Self> {
        let scalar = Self::scalar(mu, q)?;
        let weights = scalar
            .weights
            .iter()
            .map(|w| {
                let mut m = DMatrix::zeros(n, n);
                m[(0, 0)] = w[(0, 0)];
                m
            })
            .collect();
        Ok(Self { mu, weights })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn with_mu(&self, mu: f64) -> Self {
        Self {
            mu,
            weights: self.weights.clone(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, t: usize) -> &DMatrix<f64> {
        &self.weights[t]
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    /// Scalar weights `Q_t` (first diagonal entry of each block).
    pub fn q(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w[(0, 0)]).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|&x| x == 0.0))
    }

    pub(crate) fn check_model(&self, model: &GaussianModel) -> Result<()> {
        if self.weights.len() != model.horizon() {
            return Err(Error::DimensionMismatch(format!(
                "risk has {} weights for a horizon of {}",
                self.weights.len(),
                model.horizon()
            )));
        }
        let n = model.signal_dim();
        if let Some(t) = self.weights.iter().position(|w| w.shape() != (n, n)) {
            return Err(mismatch("weight", t, (n, n), self.weights[t].shape()));
        }
        Ok(())
    }

    /// `S_t = A_t² − μ Q_t` for a scalar model.
    pub fn s_scalar(&self, gains: &[f64]) -> Vec<f64> {
        gains
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| a * a - self.mu * w[(0, 0)])
            .collect()
    }

    /// `S_t = A_tᵀ A_t − μ Q_t`.
    pub fn s_matrix(&self, model: &GaussianModel) -> Vec<DMatrix<f64>> {
        model
            .gains()
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| a.transpose() * a - w * self.mu)
            .collect()
    }
}

/// One simulated path, stored flat: step `t` occupies `x[t·n..(t+1)·n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub seed: u64,
    pub path_index: u64,
}

/// Precomputed triangular factor for repeated path draws.
#[derive(Debug, Clone)]
pub struct Sampler {
    horizon: usize,
    n: usize,
    m: usize,
    mean: Vec<f64>,
    gains: Vec<DMatrix<f64>>,
    /// Factor of `(X, ε)` jointly when correlated, of `X` alone otherwise.
    factor: DMatrix<f64>,
    correlated: bool,
}

impl Sampler {
    fn new(model: &GaussianModel) -> Result<Self> {
        let correlated = model.cross_cov.is_some();
        let factor = if correlated {
            jittered_cholesky(&model.noise_joint_cov())?
        } else {
            jittered_cholesky(&model.signal_cov_matrix())?
        };
        Ok(Self {
            horizon: model.horizon,
            n: model.signal_dim,
            m: model.obs_dim,
            mean: model.mean.iter().flat_map(|v| v.iter().copied()).collect(),
            gains: model.gains.clone(),
            factor,
            correlated,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// The generator for path `index` of a run seeded with `seed`.
    pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        rng
    }

    /// Fills `x` (`T·n`) and `y` (`T·m`); `scratch` must hold the factor dimension.
    pub fn draw_into(&self, seed: u64, index: u64, x: &mut [f64], y: &mut [f64], scratch: &mut Vec<f64>) {
        let mut rng = Self::path_rng(seed, index);
        let dim = self.factor.nrows();
        scratch.clear();
        scratch.extend((0..dim).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
        let nx = self.horizon * self.n;
        let ny = self.horizon * self.m;
        let mut noise = vec![0.0; ny];
        let correlated_rows = if self.correlated { dim } else { nx };
        for i in 0..correlated_rows {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += self.factor[(i, j)] * scratch[j];
            }
            if i < nx {
                x[i] = self.mean[i] + acc;
            } else {
                noise[i - nx] = acc;
            }
        }
        if !self.correlated {
            for e in noise.iter_mut() {
                *e = StandardNormal.sample(&mut rng);
            }
        }
        for t in 0..self.horizon {
            let a = &self.gains[t];
            for r in 0..self.m {
                let mut v = noise[t * self.m + r];
                for c in 0..self.n {
                    v += a[(r, c)] * x[t * self.n + c];
                }
                y[t * self.m + r] = v;
            }
        }
    }

    pub fn trajectory(&self, seed: u64, index: u64) -> Trajectory {
        let mut x = vec![0.0; self.horizon * self.n];
        let mut y = vec![0.0; self.horizon * self.m];
        let mut scratch = Vec::with_capacity(self.factor.nrows());
        self.draw_into(seed, index, &mut x, &mut y, &mut scratch);
        Trajectory {
            x,
            y,
            seed,
            path_index: index,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_instance_is_valid() {
        let m = GaussianModel::general(vec![0.0], LowerTri::filled(1, 1.0), vec![1.0]).unwrap();
        assert_eq!(m.horizon(), 1);
        assert!(m.is_scalar());
    }

    #[test]
    fn negative_variance_is_not_psd() {
        let cov = LowerTri::from_rows(vec![vec![1.0], vec![0.0, -1.0]]).unwrap();
        let err = GaussianModel::general(vec![0.0; 2], cov, vec![1.0; 2]).unwrap_err();
        match err {
            Error::NotPositiveSemidefinite { worst_eigenvalue } => assert!(worst_eigenvalue <= -1.0 + 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let err = GaussianModel::general(vec![0.0; 2], LowerTri::filled(2, 0.0), vec![1.0]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn random_walk_kernel_is_min() {
        let m = GaussianModel::ar1(&[1.0; 3], &[1.0; 3], 0.0, &[1.0; 3]).unwrap();
        let (mean, k, _) = m.scalar_parts().unwrap();
        assert_eq!(mean, vec![0.0; 3]);
        for t in 0..3 {
            for s in 0..=t {
                assert_eq!(*k.get(t, s), (s + 1) as f64);
            }
        }
    }

    #[test]
    fn iid_ar1_has_identity_kernel() {
        let m = GaussianModel::ar1(&[0.0; 4], &[1.0; 4], 3.0, &[1.0; 4]).unwrap();
        let (mean, k, _) = m.scalar_parts().unwrap();
        assert_eq!(mean, vec![0.0; 4]);
        assert_eq!(k.to_symmetric(), DMatrix::identity(4, 4));
    }

    #[test]
    fn ar1_rejects_negative_d() {
        let err = GaussianModel::ar1(&[0.5; 2], &[1.0, -0.1], 0.0, &[1.0; 2]).unwrap_err();
        assert!(matches!(err, Error::NegativeVariance { step: 2, .. }));
    }

    #[test]
    fn ar1_mean_follows_products() {
        let m = GaussianModel::ar1(&[2.0, 0.5, 3.0], &[1.0; 3], 1.5, &[1.0; 3]).unwrap();
        let (mean, _, _) = m.scalar_parts().unwrap();
        assert_eq!(mean, vec![3.0, 1.5, 4.5]);
    }

    #[test]
    fn ma1_kernel_values() {
        let m = GaussianModel::ma1(1.0, &[1.0; 3]).unwrap();
        let (_, k, _) = m.scalar_parts().unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0]);
        assert_eq!(k.to_symmetric(), expected);
        let iid = GaussianModel::ma1(0.0, &[1.0; 3]).unwrap();
        assert_eq!(iid.scalar_parts().unwrap().1.to_symmetric(), DMatrix::identity(3, 3));
    }

    #[test]
    fn zero_gains_allowed() {
        let m = GaussianModel::ar1(&[0.9; 3], &[1.0; 3], 0.0, &[1.0, 0.0, 1.0]).unwrap();
        assert_eq!(m.scalar_parts().unwrap().2, vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn vector_gain_shape_checked() {
        let err = GaussianModel::vector(
            vec![DVector::zeros(2)],
            LowerTri::filled(1, DMatrix::identity(2, 2)),
            vec![DMatrix::zeros(1, 3)],
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn ma1_observation_blocks() {
        let m = GaussianModel::ma1_observation(0.6, &[1.0, 2.0, 0.5], 0.3).unwrap();
        assert_eq!(m.signal_dim(), 2);
        assert_eq!(m.cov_block(1, 0), DMatrix::from_row_slice(2, 2, &[0.6, 0.0, 0.0, 0.0]));
        assert!((m.cov_block(2, 2) - DMatrix::from_row_slice(2, 2, &[1.36, 0.0, 0.0, 1.0])).amax() < 1e-15);
        assert_eq!(m.cross_block(2, 1)[(1, 0)], 1.0);
        assert_eq!(m.cross_block(2, 0)[(1, 0)], 0.0);
        assert_eq!(m.gains()[1], DMatrix::from_row_slice(1, 2, &[2.0, 0.3]));
    }

    #[test]
    fn ar1_noise_preset_blocks() {
        let b = 0.5;
        let m = GaussianModel::ar1_observation_noise(&[0.8; 3], &[1.0; 3], &[1.0; 3], b).unwrap();
        // ε_0 = 0, ε_1 = ε̃_1, ε_2 = b ε̃_1 + ε̃_2.
        assert_eq!(m.cov_block(0, 0)[(1, 1)], 0.0);
        assert_eq!(m.cov_block(1, 1)[(1, 1)], 1.0);
        assert!((m.cov_block(2, 2)[(1, 1)] - 1.25).abs() < 1e-15);
        assert!((m.cov_block(2, 1)[(1, 1)] - 0.5).abs() < 1e-15);
        assert_eq!(m.cross_block(2, 0)[(1, 0)], 0.5);
        assert_eq!(m.cross_block(2, 1)[(1, 0)], 1.0);
        assert_eq!(m.cross_block(2, 2)[(1, 0)], 0.0);
    }

    #[test]
    fn empty_and_deterministic_sampling() {
        let m = GaussianModel::ar1(&[0.9; 4], &[1.0; 4], 0.0, &[1.0; 4]).unwrap();
        assert!(m.sample(7, 0).unwrap().is_empty());
        let a = m.sample(7, 5).unwrap();
        let b = m.sample_with(7, 5, Execution::Sequential).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].x, a[1].x);
    }

    #[test]
    fn risk_rejects_negative_weight() {
        assert!(RiskSpec::scalar(-1.0, vec![1.0, -0.5]).is_err());
        let r = RiskSpec::scalar(-1.0, vec![1.0, 2.0]).unwrap();
        assert_eq!(r.s_scalar(&[1.0, 0.5]), vec![2.0, 2.25]);
    }
}
