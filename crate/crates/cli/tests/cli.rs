use std::process::{Command, Output};

fn coalab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coalab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_str(&stdout(o)).unwrap()
}

#[test]
fn functionals_of_half_atom() {
    let v = json(&coalab(&[
        "functionals",
        "--measure",
        "atom:0.5:1",
        "--tol",
        "1e-12",
    ]));
    assert_eq!(v["dust"], 2.0);
    assert_eq!(v["f0"], 2.0);
    assert!((v["mu"].as_f64().unwrap() - 4.0 * std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn functionals_report_infinity_as_text() {
    let v = json(&coalab(&["functionals", "--measure", "density:uniform:1"]));
    assert_eq!(v["mu"], "inf");
    assert_eq!(v["dust"], "inf");
}

#[test]
fn rates_table() {
    let out = stdout(&coalab(&["rates", "--measure", "atom:0.5:1", "--b", "3"]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(
        lines[0],
        "b,k,lambda_bk,weighted_rate,pmf,total_rate,gamma_b"
    );
    assert_eq!(lines.len(), 3);
    let single = stdout(&coalab(&[
        "rates",
        "--measure",
        "atom:0.5:1",
        "--b",
        "3",
        "--k",
        "3",
    ]));
    assert!(single
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("3,3,0.5,0.5,0.25,"));
}

#[test]
fn oracle_table() {
    let out = stdout(&coalab(&[
        "oracle",
        "--measure",
        "atom:0:1",
        "--n-max",
        "3",
    ]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "n,expected_tau");
    let value = |i: usize| lines[i].split(',').nth(1).unwrap().parse::<f64>().unwrap();
    assert!((value(1) - 1.0).abs() < 1e-14 && (value(2) - 4.0 / 3.0).abs() < 1e-14);
}

#[test]
fn bn_table_and_missing_centering_notice() {
    let out = stdout(&coalab(&[
        "bn",
        "--measure",
        "atom:0.5:1",
        "--n-list",
        "1e4,1e6",
        "--order",
        "1",
    ]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "n,log_n,kappa,b_n,term0,term1,c_estimate");
    assert_eq!(lines.len(), 3);
    let o = coalab(&[
        "bn",
        "--measure",
        "density:log_gamma:1.2",
        "--n-list",
        "1e4",
    ]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no √log-centering"));
    assert!(stdout(&o).lines().nth(1).unwrap().ends_with(",inf"));
}

#[test]
fn experiments_write_outputs_and_refuse_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lln");
    let o = out.to_str().unwrap();
    let args = [
        "lln",
        "--measure",
        "atom:0.5:1",
        "--n-grid",
        "50,1e3",
        "--reps",
        "100",
        "--seed",
        "3",
        "--out",
        o,
    ];
    let v = json(&coalab(&args));
    assert_eq!(v["kind"], "lln");
    for f in ["config.echo", "samples.csv", "summary.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(!coalab(&args).status.success());
    let mut forced = args.to_vec();
    forced.push("--force");
    stdout(&coalab(&forced));
}

#[test]
fn simulate_passage_and_coupling_run() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let (s, pa, c) = (p("sim"), p("pass"), p("coup"));
    let v = json(&coalab(&[
        "simulate",
        "--measure",
        "atom:1:1",
        "--n",
        "20",
        "--reps",
        "200",
        "--seed",
        "1",
        "--out",
        &s,
        "--dump-path",
    ]));
    assert!(v["n20.oracle_z"].as_f64().unwrap().abs() < 4.0);
    assert!(dir.path().join("sim/path.csv").exists());
    let v = json(&coalab(&[
        "passage",
        "--measure",
        "atom:0.5:1",
        "--z",
        "10",
        "--x",
        "0",
        "--reps",
        "100",
        "--seed",
        "1",
        "--out",
        &pa,
    ]));
    assert_eq!(v["delta"], 0.5);
    let header = std::fs::read_to_string(dir.path().join("pass/samples.csv")).unwrap();
    assert!(header.starts_with("replicate,z,x,T\n"));
    let v = json(&coalab(&[
        "coupling",
        "--measure",
        "atom:0.5:1",
        "--n-grid",
        "100,1000",
        "--reps",
        "50",
        "--seed",
        "1",
        "--out",
        &c,
    ]));
    assert!(v["sup_gap_p95_spread"].as_f64().unwrap() >= 0.0);
}

#[test]
fn bad_input_fails_cleanly() {
    let o = coalab(&["functionals", "--measure", "atom:1.5:1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    let o = coalab(&[
        "clt",
        "--measure",
        "atom:0.5:1",
        "--n-grid",
        "100,10",
        "--reps",
        "10",
        "--seed",
        "1",
        "--out",
        "/tmp/x",
    ]);
    assert!(!o.status.success());
}
