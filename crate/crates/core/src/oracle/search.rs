use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::joint::{assemble_joint, JointGaussian, QuadraticForm};
use crate::error::{Error, Result};
use crate::filter::{self, AffineFilter};
use crate::model::{GaussianModel, RiskSpec};
use crate::par::{self, Execution};

#[derive(Debug, Clone)]
pub struct SearchOptions {
    /// Extra `(μ/2) Σ R_t X_t²` term in the exponent.
    pub signal_penalty: Option<Vec<f64>>,
    pub starts: usize,
    pub tolerance: f64,
    pub max_evaluations: usize,
    pub initial_step: f64,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            signal_penalty: None,
            starts: 5,
            tolerance: 1e-9,
            max_evaluations: 100_000,
            initial_step: 0.25,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AffineOptimum {
    pub filter: AffineFilter,
    pub risk: f64,
    /// Risk of the risk-neutral filter, where the first start begins.
    pub start_risk: f64,
    pub evaluations: usize,
}

/// Exact criterion `E[μ exp{(μ/2) Σ_t (Q_t (X_t − h_t)² + R_t X_t²)}]` for an
/// affine causal estimate of the first signal component from scalar observations.
#[derive(Debug, Clone)]
pub struct AffineRiskProblem {
    joint: JointGaussian,
    mu: f64,
    q: Vec<f64>,
    penalty: Vec<f64>,
}

impl AffineRiskProblem {
    pub fn new(model: &GaussianModel, risk: &RiskSpec, signal_penalty: Option<&[f64]>) -> Result<Self> {
        let horizon = model.horizon();
        if model.obs_dim() != 1 {
            return Err(Error::DimensionMismatch("affine search needs scalar observations".into()));
        }
        if risk.horizon() != horizon {
            return Err(Error::DimensionMismatch("risk horizon".into()));
        }
        for w in risk.weights() {
            let off = w.iter().enumerate().any(|(k, &v)| k != 0 && v != 0.0);
            if off {
                return Err(Error::InvalidArgument(
                    "affine search weights the first signal component only".into(),
                ));
            }
        }
        let penalty = match signal_penalty {
            Some(p) if p.len() == horizon => p.to_vec(),
            Some(_) => return Err(Error::DimensionMismatch("signal penalty length".into())),
            None => vec![0.0; horizon],
        };
        Ok(Self {
            joint: assemble_joint(model)?,
            mu: risk.mu(),
            q: risk.q(),
            penalty,
        })
    }

    pub fn horizon(&self) -> usize {
        self.joint.horizon()
    }

    /// `log E exp{(μ/2) Σ …}` for the filter.
    pub fn log_expectation(&self, f: &AffineFilter) -> Result<f64> {
        let horizon = self.horizon();
        let dim = self.joint.dim();
        let mut form = QuadraticForm::zeros(dim);
        for t in 0..horizon {
            let xi = self.joint.x_index(t, 0);
            let mut v = DVector::zeros(dim);
            v[xi] = 1.0;
            form.add_square(self.mu, self.penalty[t], &v, 0.0);
            for (l, g) in f.gain.row(t).iter().enumerate() {
                v[self.joint.y_index(l, 0)] -= g;
            }
            form.add_square(self.mu, self.q[t], &v, f.intercept[t]);
        }
        form.log_expectation(&self.joint.mean, &self.joint.cov)
    }

    pub fn risk(&self, f: &AffineFilter) -> Result<f64> {
        Ok(self.mu * self.log_expectation(f)?.exp())
    }

    /// Monotone transform of the risk to be minimized; infinite where the transform diverges.
    fn objective(&self, flat: &[f64]) -> f64 {
        let f = match AffineFilter::from_flat(self.horizon(), flat) {
            Ok(f) => f,
            Err(_) => return f64::INFINITY,
        };
        match self.log_expectation(&f) {
            Ok(l) => self.mu.signum() * l,
            Err(_) => f64::INFINITY,
        }
    }
}

/// Exact risk of an affine filter.
pub fn affine_risk(model: &GaussianModel, risk: &RiskSpec, f: &AffineFilter) -> Result<f64> {
    AffineRiskProblem::new(model, risk, None)?.risk(f)
}

/// Hooke–Jeeves pattern search. Returns `(x, f(x), evaluations)`.
pub fn pattern_search(
    f: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    initial_step: f64,
    tolerance: f64,
    max_evaluations: usize,
) -> Result<(Vec<f64>, f64, usize)> {
    let evals = std::cell::Cell::new(0usize);
    let mut eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        f(x)
    };
    let mut base = x0.to_vec();
    let mut f_base = eval(&base);
    let mut step = initial_step;
    let explore = |center: &[f64], f_center: f64, step: f64, eval: &mut dyn FnMut(&[f64]) -> f64| {
        let mut x = center.to_vec();
        let mut fx = f_center;
        for i in 0..x.len() {
            let orig = x[i];
            x[i] = orig + step;
            let up = eval(&x);
            if up < fx {
                fx = up;
                continue;
            }
            x[i] = orig - step;
            let down = eval(&x);
            if down < fx {
                fx = down;
                continue;
            }
            x[i] = orig;
        }
        (x, fx)
    };
    while step > tolerance {
        if evals.get() > max_evaluations {
            return Err(Error::NoConvergence { evaluations: evals.get() });
        }
        let (mut x_new, mut f_new) = explore(&base, f_base, step, &mut eval);
        if f_new < f_base {
            loop {
                let pattern: Vec<f64> = x_new.iter().zip(&base).map(|(n, b)| 2.0 * n - b).collect();
                base = x_new;
                f_base = f_new;
                let f_pattern = eval(&pattern);
                let (x_e, f_e) = explore(&pattern, f_pattern, step, &mut eval);
                if f_e < f_base {
                    x_new = x_e;
                    f_new = f_e;
                    if evals.get() > max_evaluations {
                        return Err(Error::NoConvergence { evaluations: evals.get() });
                    }
                } else {
                    break;
                }
            }
        } else {
            step *= 0.5;
        }
    }
    Ok((base, f_base, evals.get()))
}

/// Minimizes the exact risk over affine causal filters.
pub fn minimize_affine_risk(model: &GaussianModel, risk: &RiskSpec) -> Result<AffineOptimum> {
    minimize_affine_risk_with(model, risk, &SearchOptions::default())
}

pub fn minimize_affine_risk_with(model: &GaussianModel, risk: &RiskSpec, options: &SearchOptions) -> Result<AffineOptimum> {
    let problem = AffineRiskProblem::new(model, risk, options.signal_penalty.as_deref())?;
    let horizon = model.horizon();
    let start = risk_neutral_start(model)?;
    let start_risk = problem.risk(&start)?;
    let x0 = start.to_flat();
    let starts = options.starts.max(1);
    let runs = par::map_indexed(starts, options.execution, |k| {
        let mut x = x0.clone();
        if k > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            rng.set_stream(k as u64);
            for v in x.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += 0.3 * z;
            }
        }
        pattern_search(
            |c| problem.objective(c),
            &x,
            options.initial_step,
            options.tolerance,
            options.max_evaluations,
        )
    });
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut evaluations = 0;
    let mut last_err = None;
    for r in runs {
        match r {
            Ok((x, fx, e)) => {
                evaluations += e;
                if best.as_ref().is_none_or(|(_, fb)| fx < *fb) {
                    best = Some((x, fx));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let (x, _) = match best {
        Some(b) => b,
        None => return Err(last_err.unwrap_or(Error::NoConvergence { evaluations })),
    };
    let filter = AffineFilter::from_flat(horizon, &x)?;
    let risk_value = problem.risk(&filter)?;
    Ok(AffineOptimum {
        filter,
        risk: risk_value,
        start_risk,
        evaluations,
    })
}

/// Risk-neutral affine filter for the first signal component.
pub fn risk_neutral_start(model: &GaussianModel) -> Result<AffineFilter> {
    if model.is_scalar() && model.cross_cov().is_none() {
        return filter::risk_neutral_affine(model);
    }
    let n = model.signal_dim();
    let zero = RiskSpec::matrix(0.0, vec![nalgebra::DMatrix::zeros(n, n); model.horizon()])?;
    AffineFilter::identify(model.horizon(), |y| {
        Ok(filter::filter_correlated(model, &zero, y)?.first_component())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pattern_search_finds_quadratic_minimum() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 0.5).powi(2) + (x[0] - x[1]).powi(2) * 0.5;
        let (x, _, _) = pattern_search(f, &[0.0, 0.0], 0.25, 1e-10, 100_000).unwrap();
        // Stationary point of the quadratic.
        let det = 3.0 * 21.0 - 1.0;
        let ex = (2.0 * 21.0 - 10.0) / det;
        let ey = (3.0 * -10.0 + 2.0) / det;
        assert!((x[0] - ex).abs() < 1e-8 && (x[1] - ey).abs() < 1e-8);
    }

    #[test]
    fn flat_objective_returns_start() {
        let model = GaussianModel::ar1(&[0.5; 2], &[1.0; 2], 0.0, &[1.0; 2]).unwrap();
        let risk = RiskSpec::scalar(-1.0, vec![0.0; 2]).unwrap();
        let opt = minimize_affine_risk(&model, &risk).unwrap();
        assert_eq!(opt.filter, risk_neutral_start(&model).unwrap());
        assert_eq!(opt.risk, -1.0);
    }

    #[test]
    fn budget_exhaustion_reported() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let err = pattern_search(f, &[5.0; 4], 0.25, 1e-12, 50).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { .. }));
    }
}
