//! Monte Carlo risk estimation for causal affine filters.
//!
//! Paths are split into fixed batches that run in parallel; each batch keeps
//! compensated sums and the batch partials are combined in index order, so
//! results do not depend on the thread count.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{self, AffineFilter};
use crate::linalg::CompensatedSum;
use crate::model::{GaussianModel, RiskSpec, Sampler};
use crate::oracle::risk_neutral_start;
use crate::par::{self, Execution};

/// Paths per batch.
pub const BATCH_SIZE: usize = 4096;
/// Largest exponent accepted without counting the path as overflowing.
pub const EXPONENT_CAP: f64 = 700.0;
/// Largest tolerated fraction of overflowing paths.
pub const OVERFLOW_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterChoice {
    Leg,
    RiskNeutral,
    Affine(AffineFilter),
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: GaussianModel,
    pub risk: RiskSpec,
    pub filter: FilterChoice,
    pub n_paths: usize,
    pub seed: u64,
    pub execution: Execution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Exponential,
    MeanSquare,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub criterion: Criterion,
}

/// Per-batch partial sums, for audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BatchPartial {
    pub batch: usize,
    pub paths: usize,
    /// Exponent shift applied to the exponential sums of this batch.
    pub shift: f64,
    pub exp_sum: f64,
    pub exp_sum_sq: f64,
    pub ms_sum: f64,
    pub ms_sum_sq: f64,
    pub overflow_paths: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationOutput {
    pub exponential: RiskEstimate,
    pub mean_square: RiskEstimate,
    pub overflow_paths: usize,
    pub batches: Vec<BatchPartial>,
}

impl SimulationOutput {
    pub fn write_batches_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for b in &self.batches {
            w.serialize(b).map_err(|e| Error::InvalidArgument(format!("csv output: {e}")))?;
        }
        w.flush().map_err(|e| Error::InvalidArgument(format!("csv output: {e}")))
    }
}

/// Affine coefficients for a filter choice, estimating the first signal component.
pub fn resolve_filter(model: &GaussianModel, risk: &RiskSpec, choice: &FilterChoice) -> Result<AffineFilter> {
    let f = match choice {
        FilterChoice::RiskNeutral => risk_neutral_start(model)?,
        FilterChoice::Leg if model.is_scalar() && model.cross_cov().is_none() => filter::leg_affine(model, risk)?,
        FilterChoice::Leg => AffineFilter::identify(model.horizon(), |y| {
            Ok(filter::filter_correlated(model, risk, y)?.first_component())
        })?,
        FilterChoice::Affine(f) => f.clone(),
    };
    if f.horizon() != model.horizon() {
        return Err(Error::DimensionMismatch(format!(
            "filter horizon {} does not match model horizon {}",
            f.horizon(),
            model.horizon()
        )));
    }
    Ok(f)
}

fn check_config(config: &ExperimentConfig) -> Result<()> {
    if config.n_paths == 0 {
        return Err(Error::InvalidArgument("n_paths must be at least 1".into()));
    }
    if config.model.obs_dim() != 1 {
        return Err(Error::DimensionMismatch("simulation needs scalar observations".into()));
    }
    config.risk.check_model(&config.model)
}

/// Per-path quantities shared by estimation and comparison.
struct PathEval {
    sampler: Sampler,
    filter: AffineFilter,
    q: Vec<f64>,
    mu: f64,
    horizon: usize,
    n: usize,
}

impl PathEval {
    fn new(config: &ExperimentConfig) -> Result<Self> {
        check_config(config)?;
        Ok(Self {
            sampler: config.model.sampler()?,
            filter: resolve_filter(&config.model, &config.risk, &config.filter)?,
            q: first_component_weights(&config.risk),
            mu: config.risk.mu(),
            horizon: config.model.horizon(),
            n: config.model.signal_dim(),
        })
    }

    /// `Σ_t Q_t (X_t − h_t)²` for an already drawn path.
    fn loss(&self, x: &[f64], y: &[f64], h: &mut [f64]) -> f64 {
        self.filter.apply_into(y, h);
        (0..self.horizon).map(|t| self.q[t] * (x[t * self.n] - h[t]).powi(2)).sum()
    }
}

fn first_component_weights(risk: &RiskSpec) -> Vec<f64> {
    risk.weights().iter().map(|w| w[(0, 0)]).collect()
}

struct Scratch {
    x: Vec<f64>,
    y: Vec<f64>,
    h: Vec<f64>,
    z: Vec<f64>,
}

impl Scratch {
    fn new(horizon: usize, n: usize) -> Self {
        Self {
            x: vec![0.0; horizon * n],
            y: vec![0.0; horizon],
            h: vec![0.0; horizon],
            z: Vec::new(),
        }
    }
}

fn batch_range(b: usize, n_paths: usize) -> std::ops::Range<usize> {
    b * BATCH_SIZE..((b + 1) * BATCH_SIZE).min(n_paths)
}

fn mean_stderr(sum: f64, sum_sq: f64, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = sum / nf;
    let var = if n > 1 {
        ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0)
    } else {
        0.0
    };
    (mean, (var / nf).sqrt())
}

/// Exponential and mean-square criteria plus batch partials.
pub fn simulate(config: &ExperimentConfig) -> Result<SimulationOutput> {
    let eval = PathEval::new(config)?;
    let n_paths = config.n_paths;
    let batches = n_paths.div_ceil(BATCH_SIZE);
    let half_mu = 0.5 * eval.mu;
    let partials = par::map_indexed(batches, config.execution, |b| {
        let mut s = Scratch::new(eval.horizon, eval.n);
        let range = batch_range(b, n_paths);
        let mut exps = Vec::with_capacity(range.len());
        let (mut ms, mut ms2) = (CompensatedSum::default(), CompensatedSum::default());
        for i in range.clone() {
            eval.sampler.draw_into(config.seed, i as u64, &mut s.x, &mut s.y, &mut s.z);
            let loss = eval.loss(&s.x, &s.y, &mut s.h);
            ms.add(loss);
            ms2.add(loss * loss);
            exps.push(half_mu * loss);
        }
        let overflow_paths = exps.iter().filter(|&&e| e > EXPONENT_CAP).count();
        let shift = exps.iter().copied().fold(0.0, f64::max);
        let (mut e1, mut e2) = (CompensatedSum::default(), CompensatedSum::default());
        for e in &exps {
            e1.add((e - shift).exp());
            e2.add((2.0 * (e - shift)).exp());
        }
        BatchPartial {
            batch: b,
            paths: range.len(),
            shift,
            exp_sum: e1.value(),
            exp_sum_sq: e2.value(),
            ms_sum: ms.value(),
            ms_sum_sq: ms2.value(),
            overflow_paths,
        }
    });
    let overflow_paths: usize = partials.iter().map(|p| p.overflow_paths).sum();
    if overflow_paths as f64 > OVERFLOW_FRACTION * n_paths as f64 {
        return Err(Error::OverflowDominated {
            overflow_paths,
            n_paths,
        });
    }
    let shift = partials.iter().map(|p| p.shift).fold(0.0, f64::max);
    let (mut e1, mut e2, mut m1, mut m2) = (
        CompensatedSum::default(),
        CompensatedSum::default(),
        CompensatedSum::default(),
        CompensatedSum::default(),
    );
    for p in &partials {
        e1.add(p.exp_sum * (p.shift - shift).exp());
        e2.add(p.exp_sum_sq * (2.0 * (p.shift - shift)).exp());
        m1.add(p.ms_sum);
        m2.add(p.ms_sum_sq);
    }
    let (mean_shifted, se_shifted) = mean_stderr(e1.value(), e2.value(), n_paths);
    let scale = shift.exp();
    let exponential = RiskEstimate {
        mean: eval.mu * mean_shifted * scale,
        stderr: eval.mu.abs() * se_shifted * scale,
        n_paths,
        criterion: Criterion::Exponential,
    };
    if !exponential.mean.is_finite() || !exponential.stderr.is_finite() {
        return Err(Error::OverflowDominated {
            overflow_paths: overflow_paths.max(1),
            n_paths,
        });
    }
    let (ms_mean, ms_se) = mean_stderr(m1.value(), m2.value(), n_paths);
    Ok(SimulationOutput {
        exponential,
        mean_square: RiskEstimate {
            mean: ms_mean,
            stderr: ms_se,
            n_paths,
            criterion: Criterion::MeanSquare,
        },
        overflow_paths,
        batches: partials,
    })
}

/// Monte Carlo estimate of `E μ exp{(μ/2) Σ_t Q_t (X_t − h_t)²}`.
pub fn estimate_risk(config: &ExperimentConfig) -> Result<RiskEstimate> {
    Ok(simulate(config)?.exponential)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    pub first: RiskEstimate,
    pub second: RiskEstimate,
    /// Paired `first − second` over common paths.
    pub difference: RiskEstimate,
    /// `difference.mean / difference.stderr`; zero when both vanish.
    pub z_score: f64,
}

/// Paired comparison of two filters on common random numbers.
pub fn compare_filters(first: &ExperimentConfig, second: &ExperimentConfig) -> Result<Comparison> {
    if first.seed != second.seed || first.n_paths != second.n_paths || first.model != second.model {
        return Err(Error::InvalidArgument(
            "compared experiments must share model, seed and n_paths".into(),
        ));
    }
    let ea = PathEval::new(first)?;
    let eb = PathEval::new(second)?;
    let n_paths = first.n_paths;
    let batches = n_paths.div_ceil(BATCH_SIZE);
    let partials = par::map_indexed(batches, first.execution, |b| {
        let mut s = Scratch::new(ea.horizon, ea.n);
        let mut h2 = vec![0.0; ea.horizon];
        let mut sums = [CompensatedSum::default(); 6];
        let mut overflow = 0usize;
        for i in batch_range(b, n_paths) {
            ea.sampler.draw_into(first.seed, i as u64, &mut s.x, &mut s.y, &mut s.z);
            let xa = 0.5 * ea.mu * ea.loss(&s.x, &s.y, &mut s.h);
            let xb = 0.5 * eb.mu * eb.loss(&s.x, &s.y, &mut h2);
            overflow += usize::from(xa > EXPONENT_CAP || xb > EXPONENT_CAP);
            let (ra, rb) = (ea.mu * xa.exp(), eb.mu * xb.exp());
            let d = ra - rb;
            for (k, v) in [ra, ra * ra, rb, rb * rb, d, d * d].into_iter().enumerate() {
                sums[k].add(v);
            }
        }
        (sums.map(|s| s.value()), overflow)
    });
    let overflow_paths: usize = partials.iter().map(|p| p.1).sum();
    let mut totals = [CompensatedSum::default(); 6];
    for (p, _) in &partials {
        for k in 0..6 {
            totals[k].add(p[k]);
        }
    }
    let t = totals.map(|s| s.value());
    if overflow_paths as f64 > OVERFLOW_FRACTION * n_paths as f64 || t.iter().any(|v| !v.is_finite()) {
        return Err(Error::OverflowDominated {
            overflow_paths: overflow_paths.max(1),
            n_paths,
        });
    }
    let est = |s: f64, s2: f64| {
        let (mean, stderr) = mean_stderr(s, s2, n_paths);
        RiskEstimate {
            mean,
            stderr,
            n_paths,
            criterion: Criterion::Exponential,
        }
    };
    let difference = est(t[4], t[5]);
    let z_score = if difference.stderr > 0.0 {
        difference.mean / difference.stderr
    } else {
        0.0
    };
    Ok(Comparison {
        first: est(t[0], t[1]),
        second: est(t[2], t[3]),
        difference,
        z_score,
    })
}
