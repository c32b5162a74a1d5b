//! End-to-end acceptance criteria. Prints one PASS/FAIL line per criterion,
//! then fails if any criterion failed.

use std::f64::consts::LN_2;
use std::io::Write;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use coalab::asymptotics::{beta, beta_clamped, clt_params, prop2_c};
use coalab::coalescent::{exact_expected_absorption, simulate_path, CoalescentEngine};
use coalab::harness::{run_experiment, ExperimentConfig, ExperimentKind};
use coalab::measure::{dust_integral, f_eval, mu, sigma2};
use coalab::parse_measure;
use coalab::rates::merger_size_pmf;
use coalab::stats::Summary;
use coalab::subordinator::{rho_flow, simulate_drifted, DriftedEngine};
use coalab::Result;

type Outcome = Result<(bool, String)>;
type Criterion = (&'static str, fn() -> Outcome);

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut ok = true;
    for spec in [
        "atom:0:1",
        "atom:1:1",
        "atom:0.5:1",
        "density:uniform:1",
        "density:log_gamma:2",
    ] {
        let m = parse_measure(spec)?;
        let exact = exact_expected_absorption(&m, 200)?;
        let engine = CoalescentEngine::new(&m);
        for n in [3u64, 10, 50, 200] {
            let s = Summary::new(&engine.absorption_sample(n, 100_000, 101))?;
            let z = (s.mean - exact[n as usize]) / s.std_error;
            ok &= z.abs() <= 4.0;
            if z.abs() > worst.0.abs() {
                worst = (z, format!("{spec} n={n}"));
            }
        }
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(300);
    Ok((
        ok,
        format!(
            "worst |z| = {:.2} at {}; {:.1}s",
            worst.0.abs(),
            worst.1,
            elapsed.as_secs_f64()
        ),
    ))
}

fn closed_forms() -> Outcome {
    let m = parse_measure("atom:0.5:1")?;
    let l = LN_2;
    let checks = [
        ("mu", mu(&m)?.value, 4.0 * l),
        ("sigma2", sigma2(&m)?.value, 4.0 * l * l),
        ("dust", dust_integral(&m)?.value, 2.0),
        ("f(0)", f_eval(&m, 0.0)?, 2.0),
        ("clt variance", clt_params(&m)?.variance, 1.0 / (16.0 * l)),
    ];
    let worst = checks.iter().map(|c| rel(c.1, c.2)).fold(0.0, f64::max);
    Ok((worst <= 1e-9, format!("max relative error {worst:.1e}")))
}

fn lln() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::new(
        "atom:0.5:1",
        ExperimentKind::Lln,
        vec![1_000, 10_000, 100_000],
        2000,
        102,
    );
    let r = run_experiment(&cfg)?;
    let gap = r.get("n100000.gap").expect("gap");
    let monotone = r.flag("trend_monotone").expect("trend");
    let elapsed = start.elapsed();
    let ok = gap <= 0.10 && monotone && elapsed < Duration::from_secs(600);
    Ok((
        ok,
        format!(
            "relative gaps {:.3} / {:.3} / {gap:.3} (need <= 0.10 at n=1e5), monotone {monotone}",
            r.get("n1000.gap").expect("gap"),
            r.get("n10000.gap").expect("gap"),
        ),
    ))
}

fn clt() -> Outcome {
    let cfg = ExperimentConfig::new(
        "atom:0.5:1",
        ExperimentKind::Clt,
        vec![10_000, 100_000, 1_000_000],
        5000,
        103,
    );
    let r = run_experiment(&cfg)?;
    let ratio = r.get("n1000000.variance_ratio").expect("ratio");
    let ks_p = r.get("n1000000.ks_p").expect("ks");
    let mean_z = r.get("n1000000.mean_z").expect("mean");
    let trend = r.flag("trend_variance_monotone").expect("trend");
    let ok = (ratio - 1.0).abs() <= 0.25 && ks_p > 0.01 && mean_z.abs() <= 4.0 && trend;
    Ok((
        ok,
        format!(
            "variance ratio {:.3} / {:.3} / {ratio:.3}, KS p {ks_p:.2e}, mean {mean_z:.1} SE, monotone {trend}",
            r.get("n10000.variance_ratio").expect("ratio"),
            r.get("n100000.variance_ratio").expect("ratio"),
        ),
    ))
}

fn proposition2() -> Outcome {
    let g15 = parse_measure("density:log_gamma:1.5")?;
    let c15 = prop2_c(&g15)?;
    let c2 = prop2_c(&parse_measure("density:log_gamma:2")?)?;
    let mu15 = mu(&g15)?.value;
    let l = 1e4;
    // Analytic limit c = 2 for γ = 3/2.
    let forward = (beta(&g15, l)? - l / mu15) / l.sqrt();
    let target = 2.0 * 2.0 / (mu15 * mu15);
    let ok = c15.converged
        && rel(c15.c, 2.0) <= 0.05
        && c2.converged
        && c2.c.abs() <= 0.05
        && rel(forward, target) <= 0.05;
    Ok((
        ok,
        format!(
            "c(1.5) = {:.6}, c(2) = {:.6}, forward {forward:.5} vs {target:.5}",
            c15.c, c2.c
        ),
    ))
}

fn coupling() -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for spec in ["atom:0.5:1", "density:log_gamma:2"] {
        let cfg = ExperimentConfig::new(
            spec,
            ExperimentKind::Coupling,
            vec![1_000, 10_000, 100_000],
            1000,
            104,
        );
        let r = run_experiment(&cfg)?;
        let spread = r.get("sup_gap_p95_spread").expect("spread");
        ok &= spread < 0.5;
        detail.push(format!(
            "{spec}: p95 {:.2} / {:.2} / {:.2}, spread {spread:.3}",
            r.get("n1000.sup_gap.p95").expect("p95"),
            r.get("n10000.sup_gap.p95").expect("p95"),
            r.get("n100000.sup_gap.p95").expect("p95"),
        ));
    }
    Ok((ok, detail.join("; ")))
}

fn subordinator() -> Outcome {
    let lln = run_experiment(&ExperimentConfig::passage(
        "atom:0.5:1",
        30.0,
        0.0,
        10_000,
        105,
    ))?;
    let err = lln.get("relative_error").expect("error");
    let clt = run_experiment(&ExperimentConfig::passage(
        "atom:0.5:1",
        100.0,
        0.0,
        5000,
        106,
    ))?;
    let ks_p = clt.get("ks_p").expect("ks");
    let ok = err <= 0.03 && ks_p > 0.01;
    Ok((
        ok,
        format!(
            "z=30: mean T/z {:.4} vs {:.4} ({:.1}%); z=100: KS p {ks_p:.2e}, standardized mean {:.3}",
            lln.get("mean_over_distance").expect("ratio"),
            1.0 / (4.0 * LN_2),
            100.0 * err,
            clt.get("standardized.mean").expect("mean"),
        ),
    ))
}

/// Compact re-run of the invariant suites as property tests.
fn invariants() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 32,
        failure_persistence: None,
        ..Config::default()
    });
    let specs = [
        "atom:0:1",
        "atom:0.5:1",
        "density:uniform:1",
        "density:log_gamma:2",
        "atom:0.3:1+density:beta:2:2:1",
    ];
    let mut failures = Vec::new();
    let mut check = |name: &str, r: std::result::Result<(), String>| {
        if let Err(e) = r {
            failures.push(format!("{name}: {e}"));
        }
    };

    check(
        "pmf normalization",
        runner
            .run(&(0usize..specs.len(), 2u64..2000), |(i, b)| {
                let pmf = merger_size_pmf(&parse_measure(specs[i]).unwrap(), b).unwrap();
                prop_assert!(pmf.iter().all(|&p| p >= 0.0));
                prop_assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );
    check(
        "dust identity",
        runner
            .run(&(0.05f64..0.95, 0.1f64..3.0, 1.2f64..4.0), |(p, w, g)| {
                let m = parse_measure(&format!("atom:{p}:{w}+density:log_gamma:{g}")).unwrap();
                prop_assert!(
                    rel(f_eval(&m, 0.0).unwrap(), dust_integral(&m).unwrap().value) < 1e-9
                );
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );
    check(
        "path validity and determinism",
        runner
            .run(
                &(0usize..specs.len(), 2u64..2000, any::<u64>()),
                |(i, n, seed)| {
                    let m = parse_measure(specs[i]).unwrap();
                    let path = simulate_path(&m, n, seed).unwrap();
                    prop_assert!(path.validate().is_ok());
                    prop_assert_eq!(path, simulate_path(&m, n, seed).unwrap());
                    Ok(())
                },
            )
            .map_err(|e| e.to_string()),
    );
    check(
        "passage monotonicity",
        runner
            .run(
                &(any::<u64>(), -3.0f64..5.0, 0.01f64..3.0),
                |(seed, x, gap)| {
                    let m = parse_measure("density:log_gamma:2").unwrap();
                    let p = simulate_drifted(&m, 8.0, 1e-2, &[x, x + gap], seed).unwrap();
                    prop_assert!(p.passage_time(x).unwrap() >= p.passage_time(x + gap).unwrap());
                    Ok(())
                },
            )
            .map_err(|e| e.to_string()),
    );
    check(
        "thread independence",
        runner
            .run(&(0u64..1000,), |(seed,)| {
                let m = parse_measure("atom:0.5:1").unwrap();
                let e = DriftedEngine::new(&m, 0.5, 12.0).unwrap();
                let one = rayon::ThreadPoolBuilder::new()
                    .num_threads(1)
                    .build()
                    .unwrap();
                let a = one.install(|| e.passage_sample(10.0, 0.0, 8, seed).unwrap());
                prop_assert_eq!(a, e.passage_sample(10.0, 0.0, 8, seed).unwrap());
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );
    check(
        "β∘ρ identity",
        runner
            .run(&(0usize..2, 2.0f64..12.0, 0.0f64..1.0), |(i, z, frac)| {
                let m = parse_measure(["atom:0.5:1", "density:log_gamma:2"][i]).unwrap();
                let bz = beta_clamped(&m, z).unwrap();
                let t = frac * bz;
                let r = rho_flow(&m, z, &[t]).unwrap()[0];
                prop_assert!((beta_clamped(&m, r).unwrap() - (bz - t)).abs() < 1e-6);
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );
    let ok = failures.is_empty();
    Ok((
        ok,
        if ok {
            "6 property suites".into()
        } else {
            failures.join("; ")
        },
    ))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 8] = [
        ("1 oracle equivalence", oracle_equivalence),
        ("2 closed forms", closed_forms),
        ("3 law of large numbers", lln),
        ("4 central limit theorem", clt),
        ("5 small-p constant", proposition2),
        ("6 coupling stability", coupling),
        ("7 drifted subordinator", subordinator),
        ("8 invariant suites", invariants),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let start = Instant::now();
        let (ok, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        let line = format!(
            "{} criterion {name}: {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        // Written past the test harness's capture so the lines always show.
        let _ = writeln!(std::io::stdout().lock(), "{line}");
        if !ok {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
