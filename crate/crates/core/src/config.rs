//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "model": { "kind": "ar1", "horizon": 3, "a": 0.9, "d": 1.0, "gains": 1.0 },
//!   "risk": { "mu": -1.0, "q": 1.0 },
//!   "observations": [0.3, -0.1, 1.2],
//!   "filter": "leg",
//!   "paths": 100000,
//!   "seed": 42
//! }
//! ```
//!
//! Per-step sequences accept a scalar (repeated over the horizon) or an array.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use thiserror::Error;

use crate::error::Error;
use crate::filter::AffineFilter;
use crate::linalg::{mat_from_rows, LowerTri};
use crate::model::{GaussianModel, RiskSpec};
use crate::sim::FilterChoice;

pub const DEFAULT_PATHS: usize = 10_000;
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config error at `{field}` (line {line}, column {column}): {message}")]
    Parse {
        field: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("config error: {0}")]
    Invalid(String),
}

impl From<Error> for ConfigError {
    fn from(e: Error) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

/// A scalar repeated over the horizon, or one value per step.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Seq {
    Scalar(f64),
    Array(Vec<f64>),
}

impl Seq {
    pub fn resolve(&self, horizon: usize, name: &str) -> Result<Vec<f64>, ConfigError> {
        match self {
            Seq::Scalar(v) => Ok(vec![*v; horizon]),
            Seq::Array(v) if v.len() == horizon => Ok(v.clone()),
            Seq::Array(v) => Err(ConfigError::Invalid(format!(
                "`{name}` has {} entries, expected {horizon}",
                v.len()
            ))),
        }
    }
}

type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    General {
        mean: Vec<f64>,
        /// Lower-triangular rows `K(t, 1..=t)`.
        cov: Vec<Vec<f64>>,
        gains: Seq,
    },
    Ar1 {
        horizon: usize,
        a: Seq,
        d: Seq,
        #[serde(default)]
        x0: f64,
        gains: Seq,
    },
    Ma1 {
        horizon: usize,
        lambda: f64,
        gains: Seq,
    },
    Vector {
        mean: Vec<Vec<f64>>,
        /// Lower-triangular rows of `n×n` blocks, each block as rows.
        cov: Vec<Vec<Matrix>>,
        /// One `m×n` gain per step.
        gains: Vec<Matrix>,
        #[serde(default)]
        cross_cov: Option<Vec<Vec<Matrix>>>,
    },
    Ma1Observation {
        horizon: usize,
        lambda: f64,
        alpha: Seq,
        beta: f64,
    },
    Ar1ObservationNoise {
        horizon: usize,
        a: Seq,
        d: Seq,
        alpha: Seq,
        b: f64,
    },
}

fn block_rows(rows: &[Vec<Matrix>]) -> Result<LowerTri<DMatrix<f64>>, ConfigError> {
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        out.push(row.iter().map(|m| mat_from_rows(m)).collect::<Result<Vec<_>, _>>()?);
    }
    Ok(LowerTri::from_rows(out)?)
}

impl ModelSpec {
    pub fn build(&self) -> Result<GaussianModel, ConfigError> {
        let model = match self {
            ModelSpec::General { mean, cov, gains } => {
                let horizon = mean.len();
                GaussianModel::general(mean.clone(), LowerTri::from_rows(cov.clone())?, gains.resolve(horizon, "gains")?)?
            }
            ModelSpec::Ar1 { horizon, a, d, x0, gains } => GaussianModel::ar1(
                &a.resolve(*horizon, "a")?,
                &d.resolve(*horizon, "d")?,
                *x0,
                &gains.resolve(*horizon, "gains")?,
            )?,
            ModelSpec::Ma1 { horizon, lambda, gains } => GaussianModel::ma1(*lambda, &gains.resolve(*horizon, "gains")?)?,
            ModelSpec::Vector { mean, cov, gains, cross_cov } => GaussianModel::vector(
                mean.iter().map(|v| DVector::from_column_slice(v)).collect(),
                block_rows(cov)?,
                gains.iter().map(|g| mat_from_rows(g)).collect::<Result<Vec<_>, _>>()?,
                cross_cov.as_deref().map(block_rows).transpose()?,
            )?,
            ModelSpec::Ma1Observation { horizon, lambda, alpha, beta } => {
                GaussianModel::ma1_observation(*lambda, &alpha.resolve(*horizon, "alpha")?, *beta)?
            }
            ModelSpec::Ar1ObservationNoise { horizon, a, d, alpha, b } => GaussianModel::ar1_observation_noise(
                &a.resolve(*horizon, "a")?,
                &d.resolve(*horizon, "d")?,
                &alpha.resolve(*horizon, "alpha")?,
                *b,
            )?,
        };
        Ok(model)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ModelSpec::General { .. } => "general",
            ModelSpec::Ar1 { .. } => "ar1",
            ModelSpec::Ma1 { .. } => "ma1",
            ModelSpec::Vector { .. } => "vector",
            ModelSpec::Ma1Observation { .. } => "ma1_observation",
            ModelSpec::Ar1ObservationNoise { .. } => "ar1_observation_noise",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskConfig {
    pub mu: f64,
    /// Weight on the first signal component; defaults to 1.
    #[serde(default)]
    pub q: Option<Seq>,
    /// Full `n×n` weights per step; overrides `q`.
    #[serde(default)]
    pub weights: Option<Vec<Matrix>>,
}

impl RiskConfig {
    pub fn build(&self, model: &GaussianModel, mu_override: Option<f64>) -> Result<RiskSpec, ConfigError> {
        let mu = mu_override.unwrap_or(self.mu);
        let horizon = model.horizon();
        let risk = match &self.weights {
            Some(w) => {
                if w.len() != horizon {
                    return Err(ConfigError::Invalid(format!("`weights` has {} entries, expected {horizon}", w.len())));
                }
                RiskSpec::matrix(mu, w.iter().map(|m| mat_from_rows(m)).collect::<Result<Vec<_>, _>>()?)?
            }
            None => {
                let q = self.q.clone().unwrap_or(Seq::Scalar(1.0)).resolve(horizon, "q")?;
                RiskSpec::first_component(mu, q, model.signal_dim())?
            }
        };
        risk.check_model(model)?;
        Ok(risk)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterSpec {
    Leg,
    RiskNeutral,
    Affine(AffineFilter),
    /// JSON written by `rsfilt filter --format json`; its `affine` entry is used.
    File(PathBuf),
}

impl FilterSpec {
    pub fn resolve(&self, base: &Path) -> Result<FilterChoice, ConfigError> {
        Ok(match self {
            FilterSpec::Leg => FilterChoice::Leg,
            FilterSpec::RiskNeutral => FilterChoice::RiskNeutral,
            FilterSpec::Affine(f) => FilterChoice::Affine(AffineFilter::new(f.intercept.clone(), f.gain.clone())?),
            FilterSpec::File(p) => {
                let path = if p.is_absolute() { p.clone() } else { base.join(p) };
                #[derive(Deserialize)]
                struct Saved {
                    affine: AffineFilter,
                }
                let saved: Saved = parse_json(&read(&path)?)?;
                FilterChoice::Affine(AffineFilter::new(saved.affine.intercept, saved.affine.gain)?)
            }
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelSpec,
    pub risk: RiskConfig,
    #[serde(default)]
    pub observations: Option<Vec<f64>>,
    /// Realized estimates for the factorization; defaults to the LEG estimates.
    #[serde(default)]
    pub h: Option<Vec<f64>>,
    #[serde(default)]
    pub filter: Option<FilterSpec>,
    /// Second filter for paired comparisons; defaults to risk-neutral.
    #[serde(default)]
    pub compare_with: Option<FilterSpec>,
    #[serde(default)]
    pub paths: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Command-line overrides.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub mu: Option<f64>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
}

/// A configuration with every model-level object built.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub kind: &'static str,
    pub model: GaussianModel,
    pub risk: RiskSpec,
    pub filter: FilterChoice,
    pub compare_with: FilterChoice,
    pub observations: Option<Vec<f64>>,
    pub h: Option<Vec<f64>>,
    pub paths: usize,
    pub seed: u64,
    pub seed_defaulted: bool,
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses JSON with a field path and source position on failure.
pub fn parse_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        ConfigError::Parse {
            field,
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })
}

pub fn load(path: &Path) -> Result<Config, ConfigError> {
    parse_json(&read(path)?)
}

impl Config {
    pub fn resolve(&self, base: &Path, overrides: Overrides) -> Result<Resolved, ConfigError> {
        let model = self.model.build()?;
        let risk = self.risk.build(&model, overrides.mu)?;
        let horizon = model.horizon();
        let check_len = |v: &Option<Vec<f64>>, len: usize, name: &str| -> Result<(), ConfigError> {
            match v {
                Some(v) if v.len() != len => Err(ConfigError::Invalid(format!(
                    "`{name}` has {} entries, expected {len}",
                    v.len()
                ))),
                Some(v) if v.iter().any(|x| !x.is_finite()) => {
                    Err(ConfigError::Invalid(format!("`{name}` must be finite")))
                }
                _ => Ok(()),
            }
        };
        check_len(&self.observations, horizon * model.obs_dim(), "observations")?;
        check_len(&self.h, horizon * model.signal_dim(), "h")?;
        let paths = overrides.paths.or(self.paths).unwrap_or(DEFAULT_PATHS);
        if paths == 0 {
            return Err(ConfigError::Invalid("`paths` must be at least 1".into()));
        }
        let seed = overrides.seed.or(self.seed);
        Ok(Resolved {
            kind: self.model.kind(),
            filter: self.filter.as_ref().unwrap_or(&FilterSpec::Leg).resolve(base)?,
            compare_with: self.compare_with.as_ref().unwrap_or(&FilterSpec::RiskNeutral).resolve(base)?,
            model,
            risk,
            observations: self.observations.clone(),
            h: self.h.clone(),
            paths,
            seed: seed.unwrap_or(DEFAULT_SEED),
            seed_defaulted: seed.is_none(),
        })
    }
}
