//! Acceptance suite: one `[PASS]`/`[FAIL]` line per criterion.
//!
//! Run all criteria with `cargo test -p knnm-core --test acceptance`, or a
//! subset with `cargo test -p knnm-core --test acceptance -- 3 4`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use knnm_core::bounds::{
    admissible_k_window, chernoff_lower, chernoff_upper, deterministic_radius, uniform_ball_bound,
    uniform_radius_bound, vc_concentration_bound, BoundInputs,
};
use knnm_core::estimators::{local_linear_fit, pseudo_inverse};
use knnm_core::harness::{calibrate_constant, run_experiment, violation_frequency, ExperimentResult, ExperimentSpec};
use knnm_core::measure::{knn_measure, LocalMeasure, SampleSet};
use knnm_core::{Functional, Norm, PointCloud};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn spec(json: &str) -> ExperimentSpec {
    ExperimentSpec::from_json(json).expect("acceptance spec parses")
}

fn run(json: &str) -> ExperimentResult {
    run_experiment(&spec(json), 0).expect("experiment runs")
}

fn within(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo && v <= hi
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut mismatches = 0;
    let mut queries = 0;
    while queries < 10_000 {
        let d = rng.random_range(1..=4);
        let n = rng.random_range(1..=500);
        // Every third cloud lives on a coarse lattice to force exact ties.
        let lattice = rng.random_range(0..3) == 0;
        let coord = |rng: &mut ChaCha8Rng| {
            if lattice {
                rng.random_range(0..5) as f64 * 0.25
            } else {
                rng.random::<f64>()
            }
        };
        let coords: Vec<f64> = (0..n * d).map(|_| coord(&mut rng)).collect();
        let cloud = PointCloud::new(coords, d).unwrap();
        for _ in 0..10 {
            let norm = if rng.random::<bool>() { Norm::euclidean(d) } else { Norm::chebyshev(d) };
            let x: Vec<f64> = (0..d).map(|_| coord(&mut rng)).collect();
            let k = rng.random_range(1..=n);
            let a = cloud.knn_radius(&x, k, norm).unwrap();
            let b = cloud.knn_radius_brute_force(&x, k, norm).unwrap();
            if a.radius.to_bits() != b.radius.to_bits() || a.in_ball != b.in_ball || a.tie_count != b.tie_count {
                mismatches += 1;
            }
            queries += 1;
        }
    }
    outcome(mismatches == 0, format!("{queries} queries, {mismatches} mismatches"))
}

fn radius_concentration() -> Outcome {
    let res = run(
        r#"{"kind":"radius_concentration","model":"M1","dimension":1,"n_grid":[100000],
            "k_rule":{"power":0.7},"replications":500,"delta":0.05,"seed":2}"#,
    );
    let pooled = res.value("median_radius_ratio").unwrap();
    let violation = res.value("radius_bound_violation_frequency").unwrap();
    let tau_bar = res.plan.settings[0].radius_bound;
    // Points whose ball cannot reach the support boundary.
    let interior: Vec<f64> = res
        .find("median_radius_ratio")
        .filter_map(|a| a.point.map(|p| (res.plan.points[p][0], a.value)))
        .filter(|(x, _)| *x >= tau_bar && *x <= 1.0 - tau_bar)
        .map(|(_, v)| v)
        .collect();
    let lo = interior.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = interior.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pass = within(pooled, 0.95, 1.05) && within(lo, 0.95, 1.05) && within(hi, 0.95, 1.05) && violation <= 0.05;
    outcome(
        pass,
        format!(
            "median ratio {pooled:.4} (interior per-point medians in [{lo:.4}, {hi:.4}]), \
             sup radius bound violated in {violation:.3} of replications"
        ),
    )
}

fn clt_run() -> &'static ExperimentResult {
    static RUN: OnceLock<ExperimentResult> = OnceLock::new();
    RUN.get_or_init(|| {
        run(r#"{"kind":"clt","model":"M1","dimension":1,"n_grid":[100000],"k_rule":{"power":0.6},
                "replications":2000,"points":[[0.5]],"functionals":["identity"],"level":0.95,"seed":3}"#)
    })
}

fn clt() -> Outcome {
    let res = clt_run();
    let ks = res.find("ks_distance").next().unwrap().value;
    let var = res.find("z_variance").next().unwrap().value;
    outcome(
        ks < 0.05 && within(var, 0.9, 1.1),
        format!("KS distance {ks:.4}, variance of Z {var:.4}"),
    )
}

fn ci_coverage() -> Outcome {
    let res = clt_run();
    let cov = res.find("coverage").next().unwrap().value;
    outcome(within(cov, 0.93, 0.97), format!("95% interval coverage {cov:.4}"))
}

fn rate_sweep() -> Outcome {
    let slope = |d: usize, a: &str| {
        let res = run(&format!(
            r#"{{"kind":"rate_sweep","model":"M1","dimension":{d},
                "n_grid":[1024,2048,4096,8192,16384,32768,65536,131072],
                "k_rule":{{"power":{a}}},"replications":50,"functionals":["identity"],"seed":5}}"#
        ));
        (res.value("slope_vs_n").unwrap(), res.value("slope_vs_n_se").unwrap())
    };
    let (s1, se1) = slope(1, "0.6666666666666666");
    let (s2, se2) = slope(2, "0.5");
    let pass = (s1 + 1.0 / 3.0).abs() <= 0.08 && (s2 + 0.25).abs() <= 0.08;
    outcome(
        pass,
        format!("d=1 slope {s1:.4} (se {se1:.4}, target -0.3333), d=2 slope {s2:.4} (se {se2:.4}, target -0.25)"),
    )
}

fn nw_contrast() -> Outcome {
    let res = run(
        r#"{"kind":"nw_contrast","model":"M2","dimension":1,"n_grid":[100000],"k_rule":{"power":0.6},
            "replications":2000,"points":[[0.25],[0.75]],"functionals":["identity"],"seed":6}"#,
    );
    let knn = res.value("knn_variance_ratio").unwrap();
    let nw = res.value("nw_variance_ratio").unwrap();
    let target = res.value("nw_variance_ratio_target").unwrap();
    let empty: f64 = res.find("nw_empty_count").map(|a| a.value).sum();
    let pass = within(knn, 0.8, 1.25) && (nw / target - 1.0).abs() <= 0.3;
    outcome(
        pass,
        format!("k-NN variance ratio {knn:.4}, NW variance ratio {nw:.4} (target {target}), {empty} empty NW balls"),
    )
}

fn bound_validity() -> Outcome {
    let family = |seed: u64| {
        format!(
            r#"{{"kind":"bound_validity","model":"M1","dimension":1,"n_grid":[10000],"k_rule":{{"fixed":1000}},
                "replications":200,"delta":0.05,"functionals":["cdf:-1","cdf:-0.5","cdf:0","cdf:0.5","cdf:1"],
                "bound":{{"v":2,"a":1}},"seed":{seed}}}"#
        )
    };
    let set_a = run(&family(71));
    let cal = calibrate_constant(&set_a).unwrap();
    let set_b = run(&family(72));
    let held_out = violation_frequency(&set_b, cal.constant).unwrap();

    let sweep = run(
        r#"{"kind":"bound_validity","model":"M0","dimension":1,"n_grid":[1000000],"k_grid":[500,1000,2000,4000],
            "replications":30,"delta":0.05,"functionals":["cdf:-0.5","cdf:0","cdf:0.5"],"seed":73}"#,
    );
    let slope = sweep.value("slope_vs_k").unwrap();
    let bound = knnm_core::harness::bound_at(&set_b.plan.settings[0], cal.constant);
    let error = set_b.value("mean_sup_error").unwrap();
    let pass = held_out <= 0.05 && (slope + 0.5).abs() <= 0.1;
    outcome(
        pass,
        format!(
            "calibrated constant {} (set A violations {:.3}), held-out violations {held_out:.3} \
             (bound {bound:.4}, mean sup error {error:.4}); bias-free k-sweep slope {slope:.4}",
            cal.constant, cal.violation_frequency
        ),
    )
}

fn formula_evaluators() -> Outcome {
    use std::f64::consts::PI;
    // Reference values from 30-digit evaluations of the closed forms.
    let cases: Vec<(&str, f64, f64)> = vec![
        (
            "tau d=2",
            deterministic_radius(&BoundInputs { d: 2, n: 10_000, k: 314, ball_volume: PI, ..Default::default() }),
            0.099_974_648_917_468_21,
        ),
        (
            "tau d=1",
            deterministic_radius(&BoundInputs { d: 1, n: 10_000, k: 100, ball_volume: 2.0, ..Default::default() }),
            0.005,
        ),
        (
            "tau_bar d=1",
            uniform_radius_bound(&BoundInputs { d: 1, n: 10_000, k: 100, ball_volume: 2.0, ..Default::default() }),
            0.01,
        ),
        (
            "tau_bar d=3",
            uniform_radius_bound(&BoundInputs {
                d: 3,
                n: 20_000,
                k: 500,
                b_x: 0.8,
                c: 0.125,
                ball_volume: 4.0 * PI / 3.0,
                ..Default::default()
            }),
            0.492_372_510_921_348_3,
        ),
        (
            "k_min",
            admissible_k_window(&BoundInputs { d: 1, n: 1_000_000, k: 1000, delta: 0.05, ..Default::default() }).k_min,
            479.743_119_884_789_06,
        ),
        ("chernoff lower", chernoff_lower(200.0, 0.05), 165.383_632_347_954_3),
        ("chernoff upper", chernoff_upper(200.0, 0.05), 242.396_218_748_048_7),
        ("uniform ball", uniform_ball_bound(0.01, 100_000, 2, 0.05), 0.003_613_721_386_288_464_8),
        (
            "vc bound",
            vc_concentration_bound(100, 1.0, 1.0, 1.0, 1.0, 0.1, 2.0).unwrap(),
            40.607_832_199_153_69,
        ),
    ];
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    for (name, got, want) in &cases {
        let rel = ((got - want) / want).abs();
        worst = worst.max(rel);
        if rel > 1e-10 {
            bad.push(format!("{name}: {got} vs {want}"));
        }
    }
    outcome(
        bad.is_empty(),
        format!("{} values, worst relative error {worst:.2e}{}", cases.len(), if bad.is_empty() { String::new() } else { format!("; {}", bad.join("; ")) }),
    )
}

fn random_sample(rng: &mut ChaCha8Rng, n: usize, d: usize) -> SampleSet {
    let coords: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>()).collect();
    let ys: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
    SampleSet::scalar(PointCloud::new(coords, d).unwrap(), ys).unwrap()
}

fn invariant_suites() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut failures = Vec::new();

    // Normalization and Galois connection.
    for _ in 0..300 {
        let d = rng.random_range(1..=3);
        let s = random_sample(&mut rng, 200, d);
        let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let k = rng.random_range(1..=200);
        let m = knn_measure(&s, &x, k).unwrap();
        if m.total_mass() != 1.0 || m.integrate(&Functional::Constant(1.0)).unwrap() != 1.0 {
            failures.push("normalization");
        }
        let u = rng.random_range(0.001..0.999);
        let y = rng.random_range(-2.5..2.5);
        let q = m.conditional_quantile(u).unwrap();
        if (m.conditional_cdf(y).unwrap() >= u) != (q <= y) {
            failures.push("galois");
        }
    }

    // Local-linear affine equivariance and the Gram pseudo-inverse identity.
    for _ in 0..100 {
        let d = rng.random_range(1..=3);
        let s = random_sample(&mut rng, 150, d);
        let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let k = rng.random_range(d + 2..=150);
        let (a, b): (f64, Vec<f64>) = (rng.random_range(-3.0..3.0), (0..d).map(|_| rng.random_range(-3.0..3.0)).collect());
        let c = rng.random_range(-2.0..2.0);
        let ys: Vec<f64> = (0..s.len())
            .map(|i| {
                let xi = s.covariates().point(i);
                let lin: f64 = b.iter().zip(xi.iter().zip(&x)).map(|(bj, (xj, x0))| bj * (xj - x0)).sum();
                c * s.response(i)[0] + a + lin
            })
            .collect();
        let t = SampleSet::scalar(s.covariates().clone(), ys).unwrap();
        let f = local_linear_fit(&s, &x, k, 1.0).unwrap();
        let g = local_linear_fit(&t, &x, k, 1.0).unwrap();
        if (g.alpha - (c * f.alpha + a)).abs() > 1e-8 * (1.0 + g.alpha.abs()) {
            failures.push("equivariance alpha");
        }
        for j in 0..d {
            if (g.beta[j] - (c * f.beta[j] + b[j])).abs() > 1e-7 * (1.0 + g.beta[j].abs()) {
                failures.push("equivariance beta");
            }
        }
        let gram: &DMatrix<f64> = &f.gram;
        let (pinv, _) = pseudo_inverse(gram);
        let back = gram * &pinv * gram;
        if (&back - gram).amax() > 1e-8 * gram.amax() {
            failures.push("pinv identity");
        }
    }

    // Byte-identical experiment outputs for 1 and 4 workers.
    let dirs = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for json in [
        r#"{"kind":"clt","model":"M1","n_grid":[2000,4000],"k_rule":{"power":0.6},"replications":40,
            "points":[[0.3],[0.5]],"functionals":["identity","cdf:0"],"seed":11}"#,
        r#"{"kind":"bound_validity","model":"M2","n_grid":[20000],"k_rule":{"fixed":1000},"replications":16,
            "grid_per_axis":21,"functionals":["cdf:0"],"seed":12}"#,
    ] {
        let sp = spec(json);
        run_experiment(&sp, 1).unwrap().write(dirs.0.path()).unwrap();
        run_experiment(&sp, 4).unwrap().write(dirs.1.path()).unwrap();
        for file in ["result.json", "reps.csv"] {
            let a = std::fs::read(dirs.0.path().join(file)).unwrap();
            let b = std::fs::read(dirs.1.path().join(file)).unwrap();
            if a != b {
                failures.push("worker determinism");
            }
        }
    }

    failures.dedup();
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "normalization, Galois connection, affine equivariance, pseudo-inverse identity, 1 vs 4 workers".to_string()
        } else {
            format!("violated: {}", failures.join(", "))
        },
    )
}

type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "radius oracle equivalence", Duration::from_secs(10), oracle_equivalence),
        (2, "radius concentration", Duration::from_secs(180), radius_concentration),
        (3, "central limit", Duration::from_secs(300), clt),
        (4, "interval coverage", Duration::from_secs(300), ci_coverage),
        (5, "convergence rate", Duration::from_secs(600), rate_sweep),
        (6, "Nadaraya-Watson contrast", Duration::from_secs(180), nw_contrast),
        (7, "bound validity", Duration::from_secs(300), bound_validity),
        (8, "formula evaluators", Duration::from_secs(1), formula_evaluators),
        (9, "invariant suites", Duration::from_secs(60), invariant_suites),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut clt_time = Duration::ZERO;
    for (id, name, budget, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let mut elapsed = start.elapsed();
        // Criteria 3 and 4 share one run and one budget.
        if id == 3 {
            clt_time = elapsed;
        } else if id == 4 {
            elapsed += clt_time;
        }
        let on_time = elapsed <= budget;
        let pass = out.pass && on_time;
        if !pass {
            failed += 1;
        }
        println!(
            "[{}] criterion {id}: {name}: {} ({:.1}s of {}s budget{})",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64(),
            budget.as_secs(),
            if on_time { "" } else { ", over budget" }
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
