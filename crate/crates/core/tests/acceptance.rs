//! Exit criteria, run by a plain `main` so that every criterion prints its
//! `criterion N: PASS|FAIL` line whether or not it passes. Arguments that do
//! not start with `-` select criteria by substring of their names.

use std::time::{Duration, Instant};

use rand::Rng;
use valley::gillespie::{run_ensemble, PopulationState, RunConfig};
use valley::harness::{self, ExperimentKind, ExperimentPlan, HorizonPolicy, Sweep};
use valley::model::{
    build_example_landscape, derive_landscape, Kernel, ModelParams, ValleyBuilder,
};
use valley::ode::{integrate_field, IntegrateOptions};
use valley::oracle;
use valley::rng::Seed;
use valley::stats;
use valley::theory::{self, Regime};
use valley::tropical::{self, CascadeField, CascadeSpec};

fn threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn verdict(n: u32, pass: bool, detail: String) {
    println!(
        "criterion {n}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} failed: {detail}");
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn criterion_01_excursion_law() {
    let started = Instant::now();
    let census = oracle::excursion_census(1.0, 2.0, 100_000, 21, 101, threads()).unwrap();
    let mut probs: Vec<f64> = (0..=20)
        .map(|k| theory::excursion_pmf(1.0, 2.0, k).unwrap())
        .collect();
    probs.push(1.0 - probs.iter().sum::<f64>());
    let chi = stats::chi_square_gof(&census.histogram, &probs);
    let elapsed = started.elapsed();
    verdict(
        1,
        chi.p_value >= 0.01 && census.truncated == 0 && elapsed < Duration::from_secs(30),
        format!(
            "chi2 = {:.2} on {} df, p = {:.3}, {:.1}s",
            chi.statistic,
            chi.df,
            chi.p_value,
            secs(elapsed)
        ),
    );
}

fn criterion_02_ruin_law() {
    let started = Instant::now();
    let n = 1_000_000;
    let est = oracle::ruin_trials(1.0, 2.0, (0, 1, 3), n, 202, threads()).unwrap();
    let exact = theory::ruin_probability(1.0, 2.0, 0, 1, 3).unwrap();
    let sigma = (exact * (1.0 - exact) / n as f64).sqrt();
    let z = (est.frequency - exact) / sigma;
    let elapsed = started.elapsed();
    verdict(
        2,
        (exact - 1.0 / 7.0).abs() < 1e-15 && z.abs() <= 3.0 && elapsed < Duration::from_secs(60),
        format!(
            "frequency {:.6} vs {:.6}, z = {z:.2}, {:.1}s",
            est.frequency,
            exact,
            secs(elapsed)
        ),
    );
}

/// Sum of the excursion law until the remaining mass is negligible.
fn pmf_total(b: f64, d: f64) -> f64 {
    let mut total = 0.0;
    for k in 0..10_000_000u64 {
        let p = theory::excursion_pmf(b, d, k).unwrap();
        total += p;
        if k > 10 && p < 1e-18 {
            break;
        }
    }
    total
}

fn criterion_03_series_identities() {
    let mut rng = Seed::new(303).rng();
    let mut worst_identity = 0.0f64;
    let mut worst_norm = 0.0f64;
    for _ in 0..50 {
        let d = rng.random_range(0.1..5.0);
        let b = d * rng.random_range(0.01..=0.9);
        let lam = theory::lambda_rho(b / (b + d)).unwrap();
        let mean = theory::excursion_mean(b, d).unwrap();
        // Mean total progeny of a subcritical linear birth–death process.
        let closed = b / (d - b);
        worst_identity = worst_identity
            .max(((lam - closed) / closed).abs())
            .max(((mean - closed) / closed).abs());
        worst_norm = worst_norm.max((pmf_total(b, d) - 1.0).abs());
    }
    let at_third = theory::lambda_rho(1.0 / 3.0).unwrap();
    let census = oracle::excursion_census(1.0, 2.0, 1_000_000, 1, 304, threads()).unwrap();
    let z = (census.mean_births - 1.0) / census.std_error;
    verdict(
        3,
        worst_identity <= 1e-12 && worst_norm <= 1e-10 && (at_third - 1.0).abs() <= 1e-8 && z.abs() <= 3.0,
        format!(
            "identity rel err {worst_identity:.1e}, normalization err {worst_norm:.1e}, lambda(1/3) = {at_third:.15}, MC mean {:.4} (z = {z:.2})",
            census.mean_births
        ),
    );
}

fn random_spec(rng: &mut impl Rng, n: usize) -> CascadeSpec {
    let f: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let ell: Vec<f64> = (0..n)
        .map(|i| {
            if i == 0 || rng.random_bool(0.4) {
                rng.random_range(0.1..2.0)
            } else {
                0.0
            }
        })
        .collect();
    let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
    CascadeSpec {
        zeta: if rng.random_bool(0.5) { 1 } else { 2 },
        f,
        b: (0..n).map(|_| rng.random_range(0.2..2.0)).collect(),
        ell,
        p,
    }
}

fn criterion_04_tropical_exactness() {
    let mut rng = Seed::new(404).rng();
    let mut mismatches = 0;
    for _ in 0..500 {
        let n = rng.random_range(2..=13);
        let spec = random_spec(&mut rng, n);
        let t = rng.random_range(0.0..20.0);
        if tropical::cascade_exponent(&spec, t) != oracle::exhaustive_exponent(&spec, t) {
            mismatches += 1;
        }
    }

    let grid: Vec<f64> = (0..=10).map(|i| 5.0 * i as f64).collect();
    let opts = IntegrateOptions::new(1e-10).atol(0.0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=8);
        let spec = random_spec(&mut rng, n);
        let mu = 10f64.powf(rng.random_range(-6.0..-2.0));
        let sol = integrate_field(
            &CascadeField::new(&spec, mu),
            &spec.initial(mu),
            &grid,
            &opts,
        )
        .unwrap();
        for (&t, y) in grid.iter().zip(&sol.states) {
            let exact = tropical::cascade_exact(&spec, mu, t).unwrap();
            for (a, b) in exact.iter().zip(y) {
                if *a != 0.0 || *b != 0.0 {
                    worst = worst.max(((a - b) / a).abs());
                }
            }
        }
    }
    verdict(
        4,
        mismatches == 0 && worst <= 1e-8,
        format!(
            "{mismatches}/500 exponent mismatches, worst relative error {worst:.2e} over 100 specs"
        ),
    );
}

fn landscape_l6(kernel: Kernel) -> ModelParams {
    ValleyBuilder::new(
        &[-0.5, -1.0, -1.5, -1.25, -0.75, 1.0],
        &[-5.0, -1.0, -0.25, -1.5, -2.0, -0.05],
    )
    .rates(&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0], &[0.0; 7])
    .kernel(kernel)
    .build()
    .unwrap()
}

fn criterion_05_limit_path_convergence() {
    let started = Instant::now();
    let grid: Vec<f64> = (0..=200).map(|i| 0.05 * i as f64).collect();
    let mus = [1e-4, 1e-6, 1e-8];
    let mut ok = true;
    let mut detail = Vec::new();
    for kernel in [Kernel::OneSided, Kernel::TwoSided] {
        let r = tropical::verify_against_ode(&landscape_l6(kernel), kernel, &mus, &grid).unwrap();
        let d: Vec<String> = r
            .entries
            .iter()
            .map(|e| format!("{:.3}", e.sup_distance))
            .collect();
        ok &= r.decreasing && r.last().sup_distance < 0.1;
        detail.push(format!(
            "{kernel:?}: [{}] decreasing = {}",
            d.join(", "),
            r.decreasing
        ));
    }
    let elapsed = started.elapsed();
    ok &= elapsed < Duration::from_secs(300);
    detail.push(format!("{:.1}s", secs(elapsed)));
    verdict(5, ok, detail.join("; "));
}

fn valley_l2() -> ModelParams {
    build_example_landscape(&[-0.5, 0.8], &[-1.0, -0.6]).unwrap()
}

fn plan(
    kind: ExperimentKind,
    model: ModelParams,
    sweep: Sweep,
    replicas: u64,
    seed: u64,
) -> ExperimentPlan {
    ExperimentPlan {
        kind,
        model,
        sweep,
        replicas,
        horizon: HorizonPolicy::default(),
        epsilons: vec![harness::DEFAULT_EPSILON],
        watches: Vec::new(),
        master_seed: seed,
        threads: threads(),
        output_dir: None,
        tropical: None,
    }
}

fn criterion_06_log_k_time_scale() {
    let started = Instant::now();
    let sweep = Sweep {
        k: vec![10_000, 100_000],
        mu: Vec::new(),
        alpha: vec![4.0],
    };
    let report = harness::run_crossing_experiment(&plan(
        ExperimentKind::Crossing,
        valley_l2(),
        sweep,
        200,
        606,
    ))
    .unwrap();
    let ratios: Vec<f64> = report
        .points
        .iter()
        .map(|p| {
            assert_eq!(p.regime(), Some(Regime::LargeMutation));
            let n = &p.normalized[0];
            n.summary.as_ref().unwrap().median / n.predicted
        })
        .collect();
    let resolved: Vec<u64> = report.points.iter().map(|p| p.resolved).collect();
    let elapsed = started.elapsed();
    verdict(
        6,
        resolved.iter().all(|&r| r == 200)
            && (0.8..=1.25).contains(&ratios[1])
            && (ratios[0] - 1.0).abs() > (ratios[1] - 1.0).abs()
            && elapsed < Duration::from_secs(1200),
        format!(
            "median ratio {:.3} at K = 1e4, {:.3} at K = 1e5, t(2,4) = {:.4}, resolved {resolved:?}, {:.1}s",
            ratios[0],
            ratios[1],
            report.points[0].normalized[0].predicted,
            secs(elapsed)
        ),
    );
}

fn criterion_07_exponential_crossing_time() {
    let started = Instant::now();
    let sweep = Sweep {
        k: vec![2000],
        mu: vec![4e-4],
        alpha: Vec::new(),
    };
    let mut p = plan(ExperimentKind::Crossing, valley_l2(), sweep, 200, 707);
    p.horizon = HorizonPolicy::Scaled {
        multiple: 50.0,
        fallback: None,
    };
    p.epsilons = vec![0.1, 0.05];
    let report = harness::run_crossing_experiment(&p).unwrap();
    let point = &report.points[0];
    assert_eq!(point.regime(), Some(Regime::TinyMutation));
    let mut ok = point.resolved == 200;
    let mut detail = vec![format!("resolved {}", point.resolved)];
    for n in &point.normalized {
        let ks = n.ks.unwrap();
        let cv = n.cv.unwrap();
        let mean = n.summary.as_ref().unwrap().mean;
        ok &= !ks.rejected && (0.8..=1.2).contains(&cv) && (mean - 1.0).abs() <= 0.35;
        detail.push(format!(
            "eps {}: KS {:.4} < {:.4}, CV {:.3}, mean {:.3}",
            n.epsilon, ks.distance, ks.critical_1pct, cv, mean
        ));
    }
    let elapsed = started.elapsed();
    ok &= elapsed < Duration::from_secs(3600);
    detail.push(format!("{:.1}s", secs(elapsed)));
    verdict(7, ok, detail.join("; "));
}

fn criterion_08_extinction_first() {
    let started = Instant::now();
    let model = ValleyBuilder::new(&[-1.0, 0.5], &[-1.0, -1.5])
        .rates(&[1.0, 1.0, 1.0], &[0.5, 1.5, 0.0])
        .build()
        .unwrap();
    assert!(model.b[1] < model.d[1]);
    let sweep = Sweep {
        k: vec![20],
        mu: vec![1e-12],
        alpha: Vec::new(),
    };
    let mut p = plan(ExperimentKind::Extinction, model, sweep, 500, 808);
    p.horizon = HorizonPolicy::Scaled {
        multiple: 20.0,
        fallback: Some(1e6),
    };
    let report = harness::run_extinction_experiment(&p).unwrap();
    let point = &report.points[0];
    let frac = point.extinction_first.unwrap();
    let elapsed = started.elapsed();
    verdict(
        8,
        point.regime() == Some(Regime::ExtinctionFirst)
            && frac.n == 500
            && frac.estimate.is_some_and(|e| e >= 0.95)
            && elapsed < Duration::from_secs(600),
        format!(
            "P(T0 < B_L) = {:?} over {} resolved, regime {:?}, {:.1}s",
            frac.estimate,
            frac.n,
            point.regime(),
            secs(elapsed)
        ),
    );
}

fn criterion_09_thread_count_determinism() {
    let params = valley_l2().with_k(500).with_mu(1e-3);
    let init = PopulationState::resident(&params);
    let config = RunConfig::new(50.0).snapshots(vec![10.0, 25.0]);
    let a = run_ensemble(&params, &init, &config, 64, 909, 1).unwrap();
    let b = run_ensemble(&params, &init, &config, 64, 909, 4).unwrap();

    let sweep = Sweep {
        k: vec![300],
        mu: vec![2e-3],
        alpha: Vec::new(),
    };
    let mut p = plan(ExperimentKind::Crossing, valley_l2(), sweep, 40, 910);
    p.threads = 1;
    let ra = harness::run_plan(&p).unwrap().body_json();
    p.threads = 3;
    let rb = harness::run_plan(&p).unwrap().body_json();
    verdict(
        9,
        a.body_json() == b.body_json() && ra == rb,
        format!(
            "ensemble bodies {} bytes, report bodies {} bytes",
            a.body_json().len(),
            ra.len()
        ),
    );
}

fn criterion_10_fluctuations_shrink_with_k() {
    let base = ValleyBuilder::new(&[-0.5], &[-0.5])
        .mu(0.0)
        .build()
        .unwrap();
    let mut log_k = Vec::new();
    let mut log_var = Vec::new();
    for (i, k) in [100u64, 1000, 10_000].into_iter().enumerate() {
        let params = base.with_k(k);
        let xbar = derive_landscape(&params).unwrap().xbar[0];
        let init = PopulationState::resident(&params);
        let config = RunConfig::new(10.5).snapshots(vec![10.0]);
        let ens = run_ensemble(&params, &init, &config, 1000, 1010 + i as u64, threads()).unwrap();
        let x: Vec<f64> = ens
            .records
            .iter()
            .map(|r| r.snapshots[0][0] as f64 / k as f64)
            .collect();
        assert!((stats::mean(&x) - xbar).abs() < 0.1);
        log_k.push((k as f64).ln());
        log_var.push(stats::variance(&x).ln());
    }
    let fit = stats::linear_fit(&log_k, &log_var);
    verdict(
        10,
        (fit.slope + 1.0).abs() <= 0.2,
        format!("slope {:.3} (se {:.3})", fit.slope, fit.slope_se),
    );
}

const CRITERIA: &[(&str, fn())] = &[
    ("criterion_01_excursion_law", criterion_01_excursion_law),
    ("criterion_02_ruin_law", criterion_02_ruin_law),
    (
        "criterion_03_series_identities",
        criterion_03_series_identities,
    ),
    (
        "criterion_04_tropical_exactness",
        criterion_04_tropical_exactness,
    ),
    (
        "criterion_05_limit_path_convergence",
        criterion_05_limit_path_convergence,
    ),
    (
        "criterion_06_log_k_time_scale",
        criterion_06_log_k_time_scale,
    ),
    (
        "criterion_07_exponential_crossing_time",
        criterion_07_exponential_crossing_time,
    ),
    (
        "criterion_08_extinction_first",
        criterion_08_extinction_first,
    ),
    (
        "criterion_09_thread_count_determinism",
        criterion_09_thread_count_determinism,
    ),
    (
        "criterion_10_fluctuations_shrink_with_k",
        criterion_10_fluctuations_shrink_with_k,
    ),
];

fn main() -> std::process::ExitCode {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for &(name, criterion) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        if std::panic::catch_unwind(criterion).is_err() {
            failed.push(name);
        }
    }
    println!(
        "acceptance: {} of {ran} criteria passed",
        ran - failed.len()
    );
    if failed.is_empty() {
        std::process::ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        std::process::ExitCode::FAILURE
    }
}
