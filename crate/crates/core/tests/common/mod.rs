//! Test-side reference computations, written independently of the library's
//! oracle: dense Gaussian conditioning by direct inversion and the
//! exponential-quadratic identity via LU determinants.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rsfilt::{GaussianModel, LowerTri};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random scalar model: kernel `B Bᵀ + 0.2 I`, gains bounded away from zero.
pub fn random_scalar_model(r: &mut ChaCha8Rng, horizon: usize) -> GaussianModel {
    let b = DMatrix::from_fn(horizon, horizon, |_, _| 0.6 * r.sample::<f64, _>(StandardNormal));
    let k = &b * b.transpose() + DMatrix::identity(horizon, horizon) * 0.2;
    let mean: Vec<f64> = (0..horizon).map(|_| r.random_range(-1.0..1.0)).collect();
    let gains: Vec<f64> = (0..horizon)
        .map(|_| {
            let g: f64 = r.random_range(0.5..1.5);
            if r.random_bool(0.3) { -g } else { g }
        })
        .collect();
    GaussianModel::general(mean, LowerTri::from_fn(horizon, |t, s| k[(t, s)]), gains).unwrap()
}

pub fn random_vec(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

pub fn normals(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.sample(StandardNormal)).collect()
}

/// Mean and covariance of `(X_1..X_T, Y_1..Y_T)` for a scalar model.
pub fn joint(model: &GaussianModel) -> (DVector<f64>, DMatrix<f64>) {
    let (m, k, a) = model.scalar_parts().unwrap();
    let t = m.len();
    let kx = k.to_symmetric();
    let ad = DMatrix::from_diagonal(&DVector::from_column_slice(&a));
    let kxy = &kx * &ad;
    let ky = &ad * &kx * &ad + DMatrix::identity(t, t);
    let mut cov = DMatrix::zeros(2 * t, 2 * t);
    cov.view_mut((0, 0), (t, t)).copy_from(&kx);
    cov.view_mut((0, t), (t, t)).copy_from(&kxy);
    cov.view_mut((t, 0), (t, t)).copy_from(&kxy.transpose());
    cov.view_mut((t, t), (t, t)).copy_from(&ky);
    let mx = DVector::from_column_slice(&m);
    let my = &ad * &mx;
    let mut mean = DVector::zeros(2 * t);
    mean.rows_mut(0, t).copy_from(&mx);
    mean.rows_mut(t, t).copy_from(&my);
    (mean, cov)
}

/// Law of `X` given `Y_1..Y_k = y[..k]`.
pub fn condition_x(model: &GaussianModel, y: &[f64], k: usize) -> (DVector<f64>, DMatrix<f64>) {
    let (mean, cov) = joint(model);
    let t = model.horizon();
    let kx = cov.view((0, 0), (t, t)).into_owned();
    if k == 0 {
        return (mean.rows(0, t).into_owned(), kx);
    }
    let kxy = cov.view((0, t), (t, k)).into_owned();
    let ky = cov.view((t, t), (k, k)).into_owned();
    let ky_inv = ky.try_inverse().unwrap();
    let resid = DVector::from_column_slice(&y[..k]) - mean.rows(t, k);
    let m = mean.rows(0, t) + &kxy * &ky_inv * resid;
    let c = kx - &kxy * ky_inv * kxy.transpose();
    (m, (&c + c.transpose()) * 0.5)
}

/// `E exp{(μ/2) Σ_t q_t (X_t − h_t)²}` for `X ~ N(mean, cov)`; `None` if the transform diverges.
pub fn exp_quadratic(mean: &DVector<f64>, cov: &DMatrix<f64>, mu: f64, q: &[f64], h: &[f64]) -> Option<f64> {
    let t = mean.len();
    let a = DMatrix::from_diagonal(&DVector::from_iterator(t, q.iter().map(|v| mu * v)));
    let lhs = DMatrix::identity(t, t) - cov * &a;
    let det = lhs.clone().lu().determinant();
    if det.is_nan() || det <= 0.0 {
        return None;
    }
    let d = mean - DVector::from_column_slice(h);
    let inner = (DMatrix::identity(t, t) - &a * cov).lu().solve(&(&a * &d))?;
    Some(det.powf(-0.5) * (0.5 * d.dot(&inner)).exp())
}

/// `E[exp{(μ/2) Σ_{s<upto} q_s (X_s − h_s)²} | Y_1..Y_k]`.
pub fn conditional_transform(model: &GaussianModel, y: &[f64], k: usize, mu: f64, q: &[f64], h: &[f64], upto: usize) -> Option<f64> {
    let (m, c) = condition_x(model, y, k);
    let qt: Vec<f64> = (0..q.len()).map(|s| if s < upto { q[s] } else { 0.0 }).collect();
    exp_quadratic(&m, &c, mu, &qt, h)
}

/// Composite Simpson rule on `[lo, hi]` with an even number of intervals.
pub fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let step = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(lo + step * i as f64);
    }
    acc * step / 3.0
}

/// Nodes and weights of probabilists' Gauss–Hermite quadrature via the
/// three-term recurrence and Newton iteration (independent of the library).
pub fn hermite_rule(order: usize) -> (Vec<f64>, Vec<f64>) {
    // Physicists' rule by Newton on H_n, then rescaled to the standard normal.
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let pi4 = std::f64::consts::PI.powf(-0.25);
    let mut z: f64 = 0.0;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (pi4, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j as f64 + 1.0)).sqrt() * p2 - (j as f64 / (j as f64 + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let x = nodes.iter().map(|v| v * 2f64.sqrt()).collect();
    let w = weights.iter().map(|v| v / sqrt_pi).collect();
    (x, w)
}
