use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::joint::{assemble_joint, JointGaussian};
use crate::error::{Error, Result};
use crate::linalg::{psd_factor, LowerTri};
use crate::model::{GaussianModel, RiskSpec};

/// Joint law of `(X, Y, Y²)` with auxiliary observations
/// `Y²_t = q_t (X_t − h_t) + ε̄_t`, `ε̄_t ~ N(0, q_t)`, `q_t = −μ Q_t`, and
/// realized values for `Y` and `Y²`. The estimates `h` enter as known constants.
#[derive(Debug, Clone)]
pub struct AugmentedSystem {
    pub joint: JointGaussian,
    pub y: Vec<f64>,
    pub y2: Vec<f64>,
    pub h: Vec<f64>,
}

/// Conditional moments of `X_t` together with `Cov(X_t, ξ_{t−1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// `Σ_{s<t} Cov(X_t, X_s | ·) Y²_s`.
    pub cov_x_xi: DVector<f64>,
}

impl AuxMoments {
    /// `mean − cov_x_xi`, the quantity that solves the `Z^h` recursion.
    pub fn shifted_mean(&self) -> DVector<f64> {
        &self.mean - &self.cov_x_xi
    }
}

/// Conditional moments of the scalar observation `Y_t` given `Ȳ_{t−1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsMoments {
    pub mean: f64,
    pub var: f64,
    /// `Σ_{s<t} Cov(Y_t, X_s | Ȳ_{t−1}) Y²_s`.
    pub cov_y_xi: f64,
}

/// Builds the augmented system for a model; requires `μ ≤ 0`.
pub fn augmented_system(
    model: &GaussianModel,
    risk: &RiskSpec,
    h: &[f64],
    y: &[f64],
    aux_seed: u64,
) -> Result<AugmentedSystem> {
    AugmentedSystem::from_joint(&assemble_joint(model)?, risk, h, y, aux_seed)
}

impl AugmentedSystem {
    pub fn from_joint(joint: &JointGaussian, risk: &RiskSpec, h: &[f64], y: &[f64], aux_seed: u64) -> Result<Self> {
        if risk.mu() > 0.0 {
            return Err(Error::InvalidArgument(
                "the auxiliary observation system needs μ ≤ 0".into(),
            ));
        }
        let horizon = joint.horizon();
        let n = joint.signal_dim();
        let m = joint.obs_dim();
        if risk.horizon() != horizon || h.len() != horizon * n || y.len() != horizon * m {
            return Err(Error::DimensionMismatch("augmented system inputs".into()));
        }
        let nx = horizon * n;
        let base_dim = joint.dim();
        let mut q_big = DMatrix::zeros(nx, nx);
        for t in 0..horizon {
            let q = risk.weight(t) * (-risk.mu());
            if q.shape() != (n, n) {
                return Err(Error::DimensionMismatch("risk weight shape".into()));
            }
            q_big.view_mut((t * n, t * n), (n, n)).copy_from(&q);
        }
        // Base coordinates (X, Y, ε̄) mapped to (X, Y, Y²).
        let dim = base_dim + nx;
        let mut base = DMatrix::zeros(dim, dim);
        base.view_mut((0, 0), (base_dim, base_dim)).copy_from(&joint.cov);
        base.view_mut((base_dim, base_dim), (nx, nx)).copy_from(&q_big);
        let mut map = DMatrix::identity(dim, dim);
        map.view_mut((base_dim, 0), (nx, nx)).copy_from(&q_big);
        let cov = &map * base * map.transpose();
        let hv = DVector::from_column_slice(h);
        let mut mean = DVector::zeros(dim);
        mean.rows_mut(0, base_dim).copy_from(&joint.mean);
        let x_mean = joint.mean.rows(0, nx).into_owned();
        mean.rows_mut(base_dim, nx).copy_from(&(&q_big * (x_mean - &hv)));
        let aug = JointGaussian::new(mean, cov, horizon, n, m, true)?;

        // Realized Y² drawn from the conditional law given all of Y.
        let given_y = aug.condition_on_y(y)?;
        let idx = aug.y2_prefix(horizon);
        let cmean = DVector::from_iterator(nx, idx.iter().map(|&i| given_y.mean[i]));
        let ccov = DMatrix::from_fn(nx, nx, |a, b| given_y.cov[(idx[a], idx[b])]);
        let mut rng = ChaCha8Rng::seed_from_u64(aux_seed);
        let z = DVector::from_iterator(nx, (0..nx).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
        let y2 = cmean + psd_factor(&ccov) * z;
        Ok(Self {
            joint: aug,
            y: y.to_vec(),
            y2: y2.iter().copied().collect(),
            h: h.to_vec(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.joint.horizon()
    }

    /// Conditions on `Y_1..Y_{ky}` and `Y²_1..Y²_{k2}`.
    pub fn conditioned(&self, ky: usize, k2: usize) -> Result<JointGaussian> {
        let n = self.joint.signal_dim();
        let m = self.joint.obs_dim();
        let mut coords = self.joint.y_prefix(ky);
        coords.extend(self.joint.y2_prefix(k2));
        let mut values = self.y[..ky * m].to_vec();
        values.extend_from_slice(&self.y2[..k2 * n]);
        self.joint.condition(&coords, &values)
    }

    fn moments(&self, cond: &JointGaussian, t: usize) -> AuxMoments {
        let n = self.joint.signal_dim();
        let idx: Vec<usize> = (0..n).map(|c| cond.x_index(t, c)).collect();
        let mean = DVector::from_iterator(n, idx.iter().map(|&i| cond.mean[i]));
        let cov = DMatrix::from_fn(n, n, |a, b| cond.cov[(idx[a], idx[b])]);
        let mut cov_x_xi = DVector::zeros(n);
        for (a, &i) in idx.iter().enumerate() {
            for s in 0..t {
                for c in 0..n {
                    cov_x_xi[a] += cond.cov[(i, cond.x_index(s, c))] * self.y2[s * n + c];
                }
            }
        }
        AuxMoments { mean, cov, cov_x_xi }
    }

    /// Moments given `Ȳ_{t−1}` (0-based `t`: conditions on steps `< t`).
    pub fn predict(&self, t: usize) -> Result<AuxMoments> {
        let cond = self.conditioned(t, t)?;
        Ok(self.moments(&cond, t))
    }

    /// Moments given `Ȳ_{t,t−1}`: `Y` through step `t`, `Y²` through `t − 1`.
    pub fn tilde(&self, t: usize) -> Result<AuxMoments> {
        let cond = self.conditioned(t + 1, t)?;
        Ok(self.moments(&cond, t))
    }

    /// `Cov(X_t, X_s | Ȳ_{s−1})` for `s <= t`.
    pub fn gamma_bar_table(&self) -> Result<LowerTri<DMatrix<f64>>> {
        let horizon = self.horizon();
        let n = self.joint.signal_dim();
        let mut out = LowerTri::filled(horizon, DMatrix::zeros(n, n));
        for s in 0..horizon {
            let cond = self.conditioned(s, s)?;
            for t in s..horizon {
                out.set(
                    t,
                    s,
                    DMatrix::from_fn(n, n, |a, b| cond.cov[(cond.x_index(t, a), cond.x_index(s, b))]),
                );
            }
        }
        Ok(out)
    }

    /// Scalar observation moments given `Ȳ_{t−1}`.
    pub fn observation(&self, t: usize) -> Result<ObsMoments> {
        if self.joint.obs_dim() != 1 {
            return Err(Error::DimensionMismatch("observation moments need scalar observations".into()));
        }
        let n = self.joint.signal_dim();
        let cond = self.conditioned(t, t)?;
        let i = cond.y_index(t, 0);
        let mut cov_y_xi = 0.0;
        for s in 0..t {
            for c in 0..n {
                cov_y_xi += cond.cov[(i, cond.x_index(s, c))] * self.y2[s * n + c];
            }
        }
        Ok(ObsMoments {
            mean: cond.mean[i],
            var: cond.cov[(i, i)],
            cov_y_xi,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weight_aux_is_degenerate() {
        let model = GaussianModel::ar1(&[0.7; 3], &[1.0; 3], 0.0, &[1.0; 3]).unwrap();
        let risk = RiskSpec::scalar(-1.0, vec![0.0; 3]).unwrap();
        let sys = augmented_system(&model, &risk, &[0.1, 0.2, 0.3], &[1.0, -1.0, 0.5], 3).unwrap();
        assert!(sys.y2.iter().all(|&v| v == 0.0));
        let cond = sys.conditioned(2, 2).unwrap();
        assert_eq!(cond.dropped.len(), 2);
        let plain = assemble_joint(&model).unwrap().condition_on_y(&[1.0, -1.0]).unwrap();
        assert!((cond.cov[(2, 2)] - plain.cov[(2, 2)]).abs() < 1e-14);
    }

    #[test]
    fn variances_shrink_with_information() {
        let model = GaussianModel::ma1(0.6, &[1.0, 0.5, 1.5, 1.0]).unwrap();
        let risk = RiskSpec::scalar(-1.0, vec![1.0, 2.0, 0.5, 1.0]).unwrap();
        let sys = augmented_system(&model, &risk, &[0.0; 4], &[0.3, 0.1, -0.2, 0.9], 5).unwrap();
        let t = 3;
        let mut last = f64::INFINITY;
        for (ky, k2) in [(0, 0), (1, 0), (1, 1), (2, 1), (2, 2), (3, 2), (3, 3)] {
            let v = sys.conditioned(ky, k2).unwrap().cov[(t, t)];
            assert!(v <= last + 1e-14);
            last = v;
        }
    }

    #[test]
    fn positive_mu_rejected() {
        let model = GaussianModel::ma1(0.6, &[1.0; 2]).unwrap();
        let risk = RiskSpec::scalar(0.5, vec![1.0; 2]).unwrap();
        assert!(augmented_system(&model, &risk, &[0.0; 2], &[0.0; 2], 1).is_err());
    }
}
