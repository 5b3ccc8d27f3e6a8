//! Acceptance suite: one pass/fail line per criterion. Runs without the libtest
//! harness so the lines appear in `cargo test` output; exits non-zero if any
//! criterion fails.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rsfilt::cameron_martin::{
    cm_decompose, info_state, martingale_expectation_check, martingale_expectation_exact, CmContext,
};
use rsfilt::filter::{self, leg_affine, leg_filter, optimal_risk};
use rsfilt::oracle::{augmented_system, backward_riccati, leg_vs_rs_example, minimize_affine_risk, assemble_joint};
use rsfilt::sim::{compare_filters, estimate_risk, ExperimentConfig, FilterChoice};
use rsfilt::volterra::{self, solve_volterra};
use rsfilt::{Execution, GaussianModel, LowerTri, RiskSpec, Violation};

use common::*;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn c1_cameron_martin() -> Outcome {
    let mut r = rng(101);
    let mus = [-2.0, -1.0, -0.25, 0.1];
    let (mut worst, mut done, mut skipped) = (0.0f64, 0, 0);
    while done < 50 {
        let horizon = 1 + done % 4;
        let mu = mus[(done / 4) % 4];
        let model = random_scalar_model(&mut r, horizon);
        let q = random_vec(&mut r, horizon, 0.2, 1.5);
        let risk = RiskSpec::scalar(mu, q.clone()).unwrap();
        let y = normals(&mut r, horizon);
        let h = normals(&mut r, horizon);
        let sol = solve_volterra(&model, &risk).unwrap();
        let direct = conditional_transform(&model, &y, horizon, mu, &q, &h, horizon);
        if !sol.feasible || direct.is_none() {
            skipped += 1;
            continue;
        }
        let i_t = cm_decompose(&model, &risk, &y, &h).unwrap().i_final();
        let direct = direct.unwrap();
        worst = worst.max((i_t - direct).abs() / i_t.max(1.0));
        done += 1;
    }
    outcome(
        worst <= 1e-8,
        format!("max |I_T − oracle|/max(1, I_T) = {worst:.2e} over 50 instances ({skipped} infeasible draws redrawn)"),
    )
}

fn c2_optimality() -> Outcome {
    let mut r = rng(202);
    let (mut coef, mut risk_gap) = (0.0f64, 0.0f64);
    for i in 0..20 {
        let horizon = 1 + i % 3;
        let model = random_scalar_model(&mut r, horizon);
        let mu = -r_range(&mut r, 0.3, 1.5);
        let risk = RiskSpec::scalar(mu, random_vec(&mut r, horizon, 0.5, 1.5)).unwrap();
        let opt = minimize_affine_risk(&model, &risk).unwrap();
        let leg = leg_affine(&model, &risk).unwrap();
        let sol = solve_volterra(&model, &risk).unwrap();
        let (_, _, a) = model.scalar_parts().unwrap();
        coef = coef.max(opt.filter.max_abs_diff(&leg));
        risk_gap = risk_gap.max((opt.risk - optimal_risk(&sol, &risk, &a).unwrap()).abs());
    }
    outcome(
        coef <= 1e-5 && risk_gap <= 1e-8,
        format!("max coefficient gap {coef:.2e}, max risk gap {risk_gap:.2e} over 20 instances"),
    )
}

fn r_range(r: &mut rand_chacha::ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    random_vec(r, 1, lo, hi)[0]
}

fn c3_risk_neutral() -> Outcome {
    let mut r = rng(303);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let horizon = 1 + i % 6;
        let model = random_scalar_model(&mut r, horizon);
        let y = normals(&mut r, horizon);
        let zero = RiskSpec::scalar(0.0, vec![1.0; horizon]).unwrap();
        let h = leg_filter(&model, &zero, &y).unwrap().h_bar;
        for t in 0..horizon {
            let (m, _) = condition_x(&model, &y, t + 1);
            worst = worst.max((h[t] - m[t]).abs());
        }
    }
    outcome(worst <= 1e-10, format!("max |h̄_t − E[X_t | Y_1..Y_t]| = {worst:.2e} over 20 models"))
}

fn c4_specializations() -> Outcome {
    let mut r = rng(404);
    let (mut ar, mut ma, mut vec_gap) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let horizon = 2 + (r_range(&mut r, 0.0, 6.0) as usize);
        let a = random_vec(&mut r, horizon, -1.2, 1.2);
        let d = random_vec(&mut r, horizon, 0.2, 2.0);
        let gains = random_vec(&mut r, horizon, 0.3, 1.5);
        let q = random_vec(&mut r, horizon, 0.0, 1.5);
        let mu = r_range(&mut r, -2.0, 0.2);
        let x0 = r_range(&mut r, -1.0, 1.0);
        let y = normals(&mut r, horizon);
        let risk = RiskSpec::scalar(mu, q.clone()).unwrap();
        let model = GaussianModel::ar1(&a, &d, x0, &gains).unwrap();
        let general = solve_volterra(&model, &risk).unwrap();
        if !general.feasible {
            continue;
        }
        let special = volterra::ar1_riccati(&a, &d, &gains, &q, mu).unwrap();
        ar = ar.max(max_gap(&special, &general.diag));
        let f1 = filter::ar1_filter(&a, &d, x0, &gains, &q, mu, &y).unwrap();
        let f2 = leg_filter(&model, &risk, &y).unwrap();
        ar = ar.max(max_gap(&f1.h_bar, &f2.h_bar));

        let lambda = r_range(&mut r, -1.5, 1.5);
        let model = GaussianModel::ma1(lambda, &gains).unwrap();
        let general = solve_volterra(&model, &risk).unwrap();
        if general.feasible {
            let special = volterra::ma1_gamma(lambda, &gains, &q, mu).unwrap();
            ma = ma.max(max_gap(&special, &general.diag));
            let f1 = filter::ma1_filter(lambda, &gains, &q, mu, &y).unwrap();
            let f2 = leg_filter(&model, &risk, &y).unwrap();
            ma = ma.max(max_gap(&f1.h_bar, &f2.h_bar));
        }

        let scalar = random_scalar_model(&mut r, horizon);
        let (m, k, a1) = scalar.scalar_parts().unwrap();
        let vector = GaussianModel::vector(
            m.iter().map(|&v| DVector::from_element(1, v)).collect(),
            k.map(|&v| DMatrix::from_element(1, 1, v)),
            a1.iter().map(|&v| DMatrix::from_element(1, 1, v)).collect(),
            None,
        )
        .unwrap();
        let risk_v = RiskSpec::scalar(-r_range(&mut r, 0.1, 1.5), q.clone()).unwrap();
        let s = solve_volterra(&scalar, &risk_v).unwrap();
        let v = volterra::solve_volterra_matrix(&vector, &risk_v).unwrap().to_scalar().unwrap();
        vec_gap = vec_gap.max(s.gamma_bar.max_abs_diff(&v.gamma_bar));
    }
    outcome(
        ar <= 1e-12 && ma <= 1e-12 && vec_gap <= 1e-14,
        format!("AR(1) gap {ar:.2e}, MA(1) gap {ma:.2e}, vector-vs-scalar gap {vec_gap:.2e}"),
    )
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn c5_martingale() -> Outcome {
    let model = GaussianModel::general(
        vec![0.3, -0.2],
        LowerTri::from_rows(vec![vec![1.2], vec![0.5, 0.9]]).unwrap(),
        vec![1.1, -0.7],
    )
    .unwrap();
    let risk = RiskSpec::scalar(-1.0, vec![1.0, 0.8]).unwrap();
    let leg = leg_affine(&model, &risk).unwrap();
    let exact = martingale_expectation_exact(&model, &risk, &leg).unwrap();
    // Tensor Gauss–Hermite over the law of Y as a second route.
    let (mean, cov) = assemble_joint(&model).unwrap().y_block();
    let l = cov.cholesky().unwrap().l();
    let ctx = CmContext::new(&model, &risk).unwrap();
    let (nodes, weights) = hermite_rule(80);
    let mut quad = 0.0;
    for (z1, w1) in nodes.iter().zip(&weights) {
        for (z2, w2) in nodes.iter().zip(&weights) {
            let y = &mean + &l * DVector::from_column_slice(&[*z1, *z2]);
            let y = y.as_slice();
            quad += w1 * w2 * ctx.log_martingale(y, &leg.apply(y)).unwrap().exp();
        }
    }
    let ar = GaussianModel::ar1(&[0.8, 1.0, 0.6, 0.9], &[1.0, 0.5, 1.5, 1.0], 0.2, &[1.0, 0.8, 1.2, 1.0]).unwrap();
    let risk4 = RiskSpec::scalar(-1.0, vec![1.0; 4]).unwrap();
    let mc = martingale_expectation_check(&ar, &risk4, 100_000, 5).unwrap();
    let z = (mc.estimate - 1.0) / mc.stderr;
    outcome(
        (exact - 1.0).abs() <= 1e-9 && (quad - 1.0).abs() <= 1e-9 && z.abs() <= 4.0,
        format!(
            "T=2 exact E[M_T] − 1 = {:.2e} (quadrature {:.2e}); T=4 Monte Carlo {:.5} ± {:.5} ({z:+.2}σ)",
            exact - 1.0,
            quad - 1.0,
            mc.estimate,
            mc.stderr
        ),
    )
}

fn c6_augmented() -> Outcome {
    let mut r = rng(606);
    let (mut gamma_gap, mut z_gap) = (0.0f64, 0.0f64);
    for i in 0..12 {
        let horizon = 1 + i % 4;
        let model = random_scalar_model(&mut r, horizon);
        let q = random_vec(&mut r, horizon, 0.2, 1.5);
        let risk = RiskSpec::scalar(-1.0, q).unwrap();
        let y = normals(&mut r, horizon);
        let h = normals(&mut r, horizon);
        let sol = solve_volterra(&model, &risk).unwrap();
        let z = filter::z_h(&model, &risk, &y, &h).unwrap();
        let sys = augmented_system(&model, &risk, &h, &y, 17 + i as u64).unwrap();
        for t in 0..horizon {
            let p = sys.predict(t).unwrap();
            gamma_gap = gamma_gap.max((p.cov[(0, 0)] - sol.diag[t]).abs());
            z_gap = z_gap.max((p.shifted_mean()[0] - z[t]).abs());
        }
    }
    outcome(
        gamma_gap <= 1e-8 && z_gap <= 1e-8,
        format!("max γ̄ gap {gamma_gap:.2e}, max Z^h gap {z_gap:.2e} over 12 instances"),
    )
}

fn c7_example() -> Outcome {
    let rc = backward_riccati(20).unwrap();
    let mut differs = true;
    let mut line = String::new();
    for horizon in 2..=10 {
        let rep = leg_vs_rs_example(horizon).unwrap();
        differs &= rep.leg_differs_from_rs;
        if horizon == 2 {
            line = format!(
                "T=2: stated ĥ₁ {:.4}, stated h̄₁ {:.4}; computed ĥ₁ {:.4}, h̄₁ {:.4} (brute force {:.4})",
                rep.stated_rs_coefficient,
                rep.stated_leg_coefficient,
                rep.rs_coefficient,
                rep.leg_coefficient,
                rep.brute_force_leg_coefficient.unwrap_or(f64::NAN),
            );
        }
        if rep.stated_rs_coefficient != 0.25 {
            differs = false;
        }
    }
    outcome(
        rc.closed_form_discrepancy <= 1e-12 && differs,
        format!(
            "Γ closed form gap {:.2e} at T=20 (swapped-exponent variant gap {:.2e}); h̄₁ ≠ ĥ₁ for T=2..10; {line}",
            rc.closed_form_discrepancy, rc.swapped_form_discrepancy
        ),
    )
}

fn c8_monte_carlo() -> Outcome {
    let model = GaussianModel::ar1(&[0.9; 3], &[1.0; 3], 0.0, &[1.0; 3]).unwrap();
    let risk = RiskSpec::scalar(-1.0, vec![1.0; 3]).unwrap();
    let base = ExperimentConfig {
        model: model.clone(),
        risk: risk.clone(),
        filter: FilterChoice::Leg,
        n_paths: 1_000_000,
        seed: 2024,
        execution: Execution::Parallel,
    };
    let est = estimate_risk(&base).unwrap();
    let sol = solve_volterra(&model, &risk).unwrap();
    let exact = optimal_risk(&sol, &risk, &[1.0; 3]).unwrap();
    let z_fit = (est.mean - exact) / est.stderr;
    let rn = ExperimentConfig {
        filter: FilterChoice::RiskNeutral,
        ..base.clone()
    };
    let cmp = compare_filters(&base, &rn).unwrap();
    outcome(
        z_fit.abs() <= 4.0 && cmp.difference.mean + 4.0 * cmp.difference.stderr <= 0.0,
        format!(
            "LEG risk {:.5} ± {:.5} vs product formula {exact:.5} ({z_fit:+.2}σ); LEG − risk-neutral = {:.2e} ({:+.1}σ)",
            est.mean, est.stderr, cmp.difference.mean, cmp.z_score
        ),
    )
}

fn c9_info_state() -> Outcome {
    let mut r = rng(909);
    let (mut mass_gap, mut mean_gap) = (0.0f64, 0.0f64);
    for i in 0..9 {
        let horizon = 1 + i % 3;
        let model = random_scalar_model(&mut r, horizon);
        let q = random_vec(&mut r, horizon, 0.2, 1.5);
        let mu = [-1.0, -0.5, -2.0][i % 3];
        let risk = RiskSpec::scalar(mu, q.clone()).unwrap();
        let y = normals(&mut r, horizon);
        let h = normals(&mut r, horizon);
        for t in 1..=horizon {
            let s = info_state(&model, &risk, &y, &h, t).unwrap();
            let sd = s.variance.sqrt();
            let (lo, hi) = (s.center - 6.0 * sd, s.center + 6.0 * sd);
            let mass = simpson(|x| s.density(x), lo, hi, 10_000);
            let first = simpson(|x| x * s.density(x), lo, hi, 10_000);
            let expected = conditional_transform(&model, &y, t, mu, &q, &h, t - 1).unwrap();
            mass_gap = mass_gap.max((mass - expected).abs());
            mean_gap = mean_gap.max((first / mass - s.center).abs());
        }
    }
    outcome(
        mass_gap <= 1e-6 && mean_gap <= 1e-6,
        format!("max |∫λ_t − oracle mass| = {mass_gap:.2e}, max first-moment gap {mean_gap:.2e}"),
    )
}

fn c10_infeasible() -> Outcome {
    let model = GaussianModel::ar1(&[1.0; 4], &[1.0; 4], 0.0, &[1.0; 4]).unwrap();
    let risk = RiskSpec::scalar(10.0, vec![1.0; 4]).unwrap();
    let sol = solve_volterra(&model, &risk).unwrap();
    let violation = sol.violation.map(|v| (v.step, v.clause));
    let json = sol.to_json().to_string();
    let filter_err = leg_filter(&model, &risk, &[0.0; 4]).is_err();

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("infeasible.json");
    std::fs::write(
        &cfg,
        r#"{"model": {"kind": "ar1", "horizon": 4, "a": 1.0, "d": 1.0, "gains": 1.0},
            "risk": {"mu": 10.0, "q": 1.0}, "observations": [0.1, 0.2, -0.3, 0.4]}"#,
    )
    .unwrap();
    let out = dir.path().join("out.json");
    let code = rsfilt::cli::run([
        "rsfilt",
        "filter",
        "--quiet",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let no_output = !out.exists();
    let clean = !json.contains("NaN") && !json.contains("null,\"gamma");
    outcome(
        violation == Some((1, Violation::NonPositiveDenominator)) && filter_err && code == 2 && no_output && clean,
        format!("first violation {violation:?}; filter refuses; CLI exit code {code}; no output written: {no_output}"),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("Cameron–Martin oracle equivalence", c1_cameron_martin),
        ("optimality against brute-force affine search", c2_optimality),
        ("μ=0 reduction to the conditional mean", c3_risk_neutral),
        ("AR(1), MA(1) and vector specializations", c4_specializations),
        ("martingale normalization", c5_martingale),
        ("auxiliary-observation interpretation", c6_augmented),
        ("random-walk LEG versus RS example", c7_example),
        ("Monte Carlo risk closure", c8_monte_carlo),
        ("information-state mass", c9_info_state),
        ("infeasibility handling", c10_infeasible),
    ];
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let elapsed: Duration = start.elapsed();
        failures += usize::from(!result.pass);
        println!(
            "criterion {:>2} [{}] {name}: {} ({:.1} s)",
            i + 1,
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
