//! Command-line entry point. Exit codes: 0 on success, 1 for configuration
//! or usage errors, 2 for numerical infeasibility.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::cameron_martin::cm_decompose;
use crate::config::{self, ConfigError, Overrides, Resolved};
use crate::error::Error;
use crate::filter::{self, AffineFilter};
use crate::oracle::leg_vs_rs_example;
use crate::par::Execution;
use crate::sim::{self, ExperimentConfig, FilterChoice};
use crate::volterra;

pub const THREADS_ENV: &str = "RSFILT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "rsfilt", version, about = "Risk-sensitive filtering for general Gaussian signals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: GlobalOpts,
}

#[derive(Debug, clap::Args)]
struct GlobalOpts {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured number of Monte Carlo paths.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Overrides the configured risk parameter.
    #[arg(long, global = true, allow_hyphen_values = true)]
    mu: Option<f64>,
    /// Suppresses informational messages on standard error.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parses a configuration and echoes the resolved parameters.
    Validate,
    /// Runs the LEG filter on the configured (or sampled) observations.
    Filter,
    /// Solves the covariance recursion and reports the optimal risk.
    Risk,
    /// Evaluates the conditional Cameron–Martin factorization.
    Cm,
    /// Monte Carlo estimate of the risk of the configured filter.
    Simulate,
    /// Paired comparison of `filter` against `compare_with`.
    Compare,
    /// LEG versus RS first-step coefficients in the random-walk example.
    #[command(name = "example-5-2")]
    Example52 {
        #[arg(long = "T", default_value_t = 10)]
        horizon: usize,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Config(ConfigError),
    Numerical(Error),
    Other(Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e)
        } else {
            Failure::Other(e)
        }
    }
}

impl Failure {
    fn exit_code(&self) -> i32 {
        match self {
            Failure::Numerical(_) => 2,
            _ => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "{m}"),
            Failure::Config(e) => write!(f, "{e}"),
            Failure::Numerical(e) => write!(f, "numerical infeasibility: {e}"),
            Failure::Other(e) => write!(f, "{e}"),
        }
    }
}

type Outcome<T> = Result<T, Failure>;

/// Runs the CLI on `argv` (including the program name) and returns the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads(cli.opts.quiet);
    match execute(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

fn configure_threads(quiet: bool) {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return;
    };
    match value.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            #[cfg(feature = "parallel")]
            {
                // Fails only if the pool was already built, e.g. by an earlier call in-process.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            #[cfg(not(feature = "parallel"))]
            let _ = n;
        }
        _ => {
            if !quiet {
                eprintln!("warning: ignoring {THREADS_ENV}={value:?}");
            }
        }
    }
}

fn info(quiet: bool, msg: &str) {
    if !quiet {
        eprintln!("{msg}");
    }
}

fn resolve(opts: &GlobalOpts) -> Outcome<Resolved> {
    let path = opts
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("this command needs --config PATH".into()))?;
    let cfg = config::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let r = cfg.resolve(
        base,
        Overrides {
            mu: opts.mu,
            seed: opts.seed,
            paths: opts.paths,
        },
    )?;
    if r.seed_defaulted {
        info(opts.quiet, &format!("using default seed {}", r.seed));
    }
    Ok(r)
}

/// Output sink.
fn emit(opts: &GlobalOpts, body: &[u8]) -> Outcome<()> {
    match &opts.out {
        Some(p) => fs::write(p, body).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", p.display()))),
        None => io::stdout()
            .write_all(body)
            .map_err(|e| Failure::Usage(format!("cannot write output: {e}"))),
    }
}

fn to_json<T: Serialize>(v: &T) -> Outcome<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v).map_err(|e| Failure::Usage(e.to_string()))?;
    s.push(b'\n');
    Ok(s)
}

fn ensure_finite(v: &Value) -> Outcome<()> {
    fn walk(v: &Value, path: &mut String) -> Option<String> {
        match v {
            Value::Null => Some(path.clone()),
            Value::Array(a) => a.iter().enumerate().find_map(|(i, x)| {
                let len = path.len();
                path.push_str(&format!("[{i}]"));
                let r = walk(x, path);
                path.truncate(len);
                r
            }),
            Value::Object(o) => o.iter().find_map(|(k, x)| {
                if x.is_null() && NULLABLE.contains(&k.as_str()) {
                    return None;
                }
                let len = path.len();
                path.push('.');
                path.push_str(k);
                let r = walk(x, path);
                path.truncate(len);
                r
            }),
            _ => None,
        }
    }
    const NULLABLE: &[&str] = &["risk", "optimal_risk", "first_violation", "violation", "brute_force_leg_coefficient"];
    match walk(v, &mut String::new()) {
        None => Ok(()),
        Some(p) => Err(Failure::Numerical(Error::DomainError(format!(
            "non-finite value in output at {p}"
        )))),
    }
}

/// Sampled observations when none are configured.
fn observations(r: &Resolved, quiet: bool) -> Outcome<Vec<f64>> {
    if let Some(y) = &r.observations {
        return Ok(y.clone());
    }
    info(quiet, &format!("no observations configured; sampling path 0 with seed {}", r.seed));
    Ok(r.model.sampler()?.trajectory(r.seed, 0).y)
}

fn experiment(r: &Resolved, filter: FilterChoice) -> ExperimentConfig {
    ExperimentConfig {
        model: r.model.clone(),
        risk: r.risk.clone(),
        filter,
        n_paths: r.paths,
        seed: r.seed,
        execution: Execution::default(),
    }
}

fn execute(cli: &Cli) -> Outcome<()> {
    let opts = &cli.opts;
    match &cli.command {
        Command::Validate => validate(opts),
        Command::Filter => run_filter(opts),
        Command::Risk => run_risk(opts),
        Command::Cm => run_cm(opts),
        Command::Simulate => run_simulate(opts),
        Command::Compare => run_compare(opts),
        Command::Example52 { horizon } => run_example(opts, *horizon),
    }
}

fn validate(opts: &GlobalOpts) -> Outcome<()> {
    let r = resolve(opts)?;
    let feasibility = match volterra::solve_any(&r.model, &r.risk) {
        Ok(sol) => json!({ "feasible": sol.feasible, "first_violation": sol.first_violation }),
        Err(e) => json!({ "feasible": false, "error": e.to_string() }),
    };
    let echo = json!({
        "model": r.kind,
        "horizon": r.model.horizon(),
        "signal_dim": r.model.signal_dim(),
        "obs_dim": r.model.obs_dim(),
        "correlated_noise": r.model.cross_cov().is_some(),
        "mu": r.risk.mu(),
        "weights": r.risk.weights().iter().map(crate::linalg::mat_rows).collect::<Vec<_>>(),
        "filter": r.filter,
        "compare_with": r.compare_with,
        "observations": r.observations,
        "paths": r.paths,
        "seed": r.seed,
        "volterra": feasibility,
    });
    if opts.format == Format::Csv {
        let mut s = String::from("key,value\n");
        for (k, v) in echo.as_object().into_iter().flatten() {
            s.push_str(&format!("{k},\"{}\"\n", v.to_string().replace('"', "\"\"")));
        }
        return emit(opts, s.as_bytes());
    }
    emit(opts, &to_json(&echo)?)
}

fn run_filter(opts: &GlobalOpts) -> Outcome<()> {
    let r = resolve(opts)?;
    let y = observations(&r, opts.quiet)?;
    if r.model.is_scalar() && r.model.cross_cov().is_none() {
        let sol = volterra::solve_volterra(&r.model, &r.risk)?;
        sol.require_feasible()?;
        let run = filter::leg_filter_with(&r.model, &r.risk, &sol, &y)?;
        let affine = filter::leg_affine_with(&r.model, &sol)?;
        let value = json!({ "run": run, "affine": affine });
        ensure_finite(&value)?;
        return match opts.format {
            Format::Json => emit(opts, &to_json(&value)?),
            Format::Csv => {
                let mut buf = Vec::new();
                run.write_csv(&mut buf)?;
                emit(opts, &buf)
            }
        };
    }
    let run = filter::filter_correlated(&r.model, &r.risk, &y)?;
    let affine = AffineFilter::identify(r.model.horizon(), |obs| {
        Ok(filter::filter_correlated(&r.model, &r.risk, obs)?.first_component())
    })?;
    let rows = |v: &[nalgebra::DVector<f64>]| v.iter().map(|x| x.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>();
    let value = json!({
        "run": {
            "mu": run.mu,
            "y": y,
            "h_bar": rows(&run.h_bar),
            "z_h": rows(&run.z_h),
            "z_tilde": rows(&run.z_tilde),
            "gamma_bar": run.gamma_bar.iter().map(crate::linalg::mat_rows).collect::<Vec<_>>(),
        },
        "affine": affine,
    });
    ensure_finite(&value)?;
    match opts.format {
        Format::Json => emit(opts, &to_json(&value)?),
        Format::Csv => {
            let n = r.model.signal_dim();
            let m = r.model.obs_dim();
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["t".to_string()];
            header.extend((1..=m).map(|c| format!("Y_{c}")));
            for name in ["h_bar", "Z_h", "Z_tilde"] {
                header.extend((1..=n).map(|c| format!("{name}_{c}")));
            }
            w.write_record(&header).map_err(csv_err)?;
            for t in 0..r.model.horizon() {
                let mut rec = vec![(t + 1).to_string()];
                rec.extend(y[t * m..(t + 1) * m].iter().map(f64::to_string));
                for v in [&run.h_bar[t], &run.z_h[t], &run.z_tilde[t]] {
                    rec.extend(v.iter().map(f64::to_string));
                }
                w.write_record(&rec).map_err(csv_err)?;
            }
            emit(opts, &w.into_inner().map_err(|e| Failure::Usage(e.to_string()))?)
        }
    }
}

fn csv_err(e: csv::Error) -> Failure {
    Failure::Usage(format!("csv output: {e}"))
}

fn run_risk(opts: &GlobalOpts) -> Outcome<()> {
    let r = resolve(opts)?;
    if r.model.is_scalar() && r.model.cross_cov().is_none() {
        let sol = volterra::solve_volterra(&r.model, &r.risk)?;
        sol.require_feasible()?;
        let (_, _, a) = r.model.scalar_parts()?;
        let optimal = if r.risk.mu() == 0.0 {
            None
        } else {
            Some(filter::optimal_risk(&sol, &r.risk, &a)?)
        };
        let value = json!({
            "mu": sol.mu,
            "feasible": sol.feasible,
            "gamma_bar_diag": sol.diag,
            "S": sol.s,
            "log_risk_factor": filter::log_risk_factor(&sol, &a),
            "optimal_risk": optimal,
            "gamma_bar": sol.gamma_bar,
        });
        ensure_finite(&value)?;
        return match opts.format {
            Format::Json => emit(opts, &to_json(&value)?),
            Format::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(["t", "gamma_bar", "S"]).map_err(csv_err)?;
                for t in 0..sol.horizon() {
                    w.write_record([(t + 1).to_string(), sol.diag[t].to_string(), sol.s[t].to_string()])
                        .map_err(csv_err)?;
                }
                emit(opts, &w.into_inner().map_err(|e| Failure::Usage(e.to_string()))?)
            }
        };
    }
    let sol = volterra::solve_any(&r.model, &r.risk)?;
    if let Some(v) = sol.violation {
        return Err(v.to_error().into());
    }
    let value = sol.to_json();
    ensure_finite(&value)?;
    match opts.format {
        Format::Json => emit(opts, &to_json(&value)?),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["t", "row", "col", "gamma_bar"]).map_err(csv_err)?;
            for (t, d) in sol.diag.iter().enumerate() {
                for i in 0..d.nrows() {
                    for j in 0..d.ncols() {
                        w.write_record([(t + 1).to_string(), (i + 1).to_string(), (j + 1).to_string(), d[(i, j)].to_string()])
                            .map_err(csv_err)?;
                    }
                }
            }
            emit(opts, &w.into_inner().map_err(|e| Failure::Usage(e.to_string()))?)
        }
    }
}

fn run_cm(opts: &GlobalOpts) -> Outcome<()> {
    let r = resolve(opts)?;
    let y = observations(&r, opts.quiet)?;
    let h = match &r.h {
        Some(h) => h.clone(),
        None => filter::leg_filter(&r.model, &r.risk, &y)?.h_bar,
    };
    let d = cm_decompose(&r.model, &r.risk, &y, &h)?;
    let value = json!({
        "decomposition": d,
        "I_T": d.i_final(),
        "M_T": d.m_final(),
        "y": y,
        "h": h,
    });
    ensure_finite(&value)?;
    match opts.format {
        Format::Json => emit(opts, &to_json(&value)?),
        Format::Csv => {
            let mut buf = Vec::new();
            d.write_csv(&mut buf, &y, &h)?;
            emit(opts, &buf)
        }
    }
}

fn run_simulate(opts: &GlobalOpts) -> Outcome<()> {
    let r = resolve(opts)?;
    let out = sim::simulate(&experiment(&r, r.filter.clone()))?;
    let value = serde_json::to_value(&out).map_err(|e| Failure::Usage(e.to_string()))?;
    ensure_finite(&value)?;
    match opts.format {
        Format::Json => emit(opts, &to_json(&json!({
            "exponential": out.exponential,
            "mean_square": out.mean_square,
            "overflow_paths": out.overflow_paths,
            "seed": r.seed,
            "batches": out.batches.len(),
        }))?),
        Format::Csv => {
            let mut buf = Vec::new();
            out.write_batches_csv(&mut buf)?;
            emit(opts, &buf)
        }
    }
}

fn run_compare(opts: &GlobalOpts) -> Outcome<()> {
    let r = resolve(opts)?;
    let cmp = sim::compare_filters(&experiment(&r, r.filter.clone()), &experiment(&r, r.compare_with.clone()))?;
    let value = serde_json::to_value(cmp).map_err(|e| Failure::Usage(e.to_string()))?;
    ensure_finite(&value)?;
    match opts.format {
        Format::Json => emit(opts, &to_json(&value)?),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["first_mean", "first_stderr", "second_mean", "second_stderr", "difference", "difference_stderr", "z_score", "n_paths"])
                .map_err(csv_err)?;
            w.write_record(
                [
                    cmp.first.mean,
                    cmp.first.stderr,
                    cmp.second.mean,
                    cmp.second.stderr,
                    cmp.difference.mean,
                    cmp.difference.stderr,
                    cmp.z_score,
                ]
                .iter()
                .map(f64::to_string)
                .chain(std::iter::once(cmp.first.n_paths.to_string())),
            )
            .map_err(csv_err)?;
            emit(opts, &w.into_inner().map_err(|e| Failure::Usage(e.to_string()))?)
        }
    }
}

fn run_example(opts: &GlobalOpts, horizon: usize) -> Outcome<()> {
    let report = leg_vs_rs_example(horizon)?;
    let value = serde_json::to_value(&report).map_err(|e| Failure::Usage(e.to_string()))?;
    ensure_finite(&value)?;
    match opts.format {
        Format::Json => emit(opts, &to_json(&report)?),
        Format::Csv => {
            let rc = &report.riccati;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["t", "Gamma", "Gamma_closed_form", "Gamma_swapped_form"]).map_err(csv_err)?;
            for t in 0..rc.horizon {
                w.write_record([
                    (t + 1).to_string(),
                    rc.gamma[t].to_string(),
                    rc.gamma_closed_form[t].to_string(),
                    rc.gamma_swapped_form[t].to_string(),
                ])
                .map_err(csv_err)?;
            }
            emit(opts, &w.into_inner().map_err(|e| Failure::Usage(e.to_string()))?)
        }
    }
}
