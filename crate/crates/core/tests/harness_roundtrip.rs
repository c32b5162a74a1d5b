use coalab::harness::{
    read_samples, read_summary, run_experiment, summarize, write_outputs, ExperimentConfig,
    ExperimentKind,
};
use coalab::Error;

fn configs() -> Vec<ExperimentConfig> {
    let mut lln = ExperimentConfig::new("atom:0.5:1", ExperimentKind::Lln, vec![50, 2000], 300, 1);
    lln.threads = Some(2);
    let mut exploratory = ExperimentConfig::new(
        "density:log_gamma:0.8",
        ExperimentKind::Lln,
        vec![100, 1000],
        50,
        2,
    );
    exploratory.power = Some(0.8);
    let mut coupling = ExperimentConfig::new(
        "density:log_gamma:2",
        ExperimentKind::Coupling,
        vec![100, 1000],
        100,
        3,
    );
    coupling.delta = Some(1e-2);
    vec![
        lln,
        exploratory,
        ExperimentConfig::new(
            "density:uniform:1",
            ExperimentKind::Simulate,
            vec![150],
            400,
            4,
        ),
        ExperimentConfig::new("atom:0.5:1", ExperimentKind::Clt, vec![100, 10_000], 300, 5),
        coupling,
        ExperimentConfig::passage("atom:0.5:1", 12.0, 0.0, 200, 6),
    ]
}

#[test]
fn summaries_round_trip_through_csv() {
    for cfg in configs() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let result = run_experiment(&cfg).unwrap();
        write_outputs(&result, &out, false).unwrap();
        let (columns, rows) = read_samples(&out.join("samples.csv")).unwrap();
        assert_eq!(rows, result.rows, "{:?}", cfg.kind);
        let (recomputed, _) = summarize(&cfg, &columns, &rows).unwrap();
        let written = read_summary(&out.join("summary.json")).unwrap();
        for (k, v) in &recomputed {
            assert_eq!(Some(v), written.get(k), "{:?} {k}", cfg.kind);
        }
        assert_eq!(recomputed, written);
        let echo = std::fs::read_to_string(out.join("config.echo")).unwrap();
        assert!(
            echo.contains(&format!("measure = {}", cfg.measure))
                && echo.contains("fingerprint = coalab")
        );
    }
}

#[test]
fn outputs_are_not_overwritten_without_force() {
    let cfg = ExperimentConfig::new("atom:0:1", ExperimentKind::Simulate, vec![20], 50, 1);
    let dir = tempfile::tempdir().unwrap();
    let result = run_experiment(&cfg).unwrap();
    write_outputs(&result, dir.path(), false).unwrap();
    assert!(matches!(
        write_outputs(&result, dir.path(), false),
        Err(Error::OutputExists(_))
    ));
    write_outputs(&result, dir.path(), true).unwrap();
}

#[test]
fn thread_budget_does_not_change_samples() {
    let base = ExperimentConfig::new(
        "atom:0.2:1+density:log_gamma:2",
        ExperimentKind::Coupling,
        vec![300, 3000],
        64,
        9,
    );
    let runs: Vec<_> = [1, 4]
        .iter()
        .map(|&t| {
            let dir = tempfile::tempdir().unwrap();
            let cfg = ExperimentConfig {
                threads: Some(t),
                ..base.clone()
            };
            write_outputs(&run_experiment(&cfg).unwrap(), dir.path(), false).unwrap();
            std::fs::read(dir.path().join("samples.csv")).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn infinite_functionals_are_written_as_text() {
    let cfg = ExperimentConfig::new(
        "density:uniform:1",
        ExperimentKind::Simulate,
        vec![10],
        20,
        1,
    );
    let dir = tempfile::tempdir().unwrap();
    write_outputs(&run_experiment(&cfg).unwrap(), dir.path(), false).unwrap();
    let json = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    assert!(json.contains("\"mu\": \"inf\""), "{json}");
}

#[test]
fn lln_on_kingman_has_zero_reference() {
    let cfg = ExperimentConfig::new("atom:0:1", ExperimentKind::Lln, vec![10_000], 200, 2);
    let r = run_experiment(&cfg).unwrap();
    assert_eq!(r.get("reference"), Some(0.0));
    let mean = r.get("n10000.stat.mean").unwrap();
    assert!((mean - 2.0 / 10_000f64.ln()).abs() < 0.03, "{mean}");
}
