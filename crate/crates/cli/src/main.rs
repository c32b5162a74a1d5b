use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use coalab::asymptotics::{b_n, bn_expansion, kappa, profile, prop2_c};
use coalab::coalescent::{exact_expected_absorption, CoalescentEngine};
use coalab::harness::{
    encode, run_experiment, with_threads, write_outputs, ExperimentConfig, ExperimentKind,
    FlatSummary,
};
use coalab::measure::{
    dust_integral_with, f_eval, mu_with, sigma2_with, total_mass, LambdaMeasure,
};
use coalab::quadrature::QuadConfig;
use coalab::rates::{
    cdi_diagnostic, gamma_b, lambda_bk, merger_size_pmf, total_merger_rate, weighted_rate,
};
use coalab::{parse_measure, Error, Result};

/// Simulation and verification toolkit for Λ-coalescent absorption times.
#[derive(Parser)]
#[command(name = "coalab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integral functionals μ, σ², dust integral, f(0), κ and the CLT variance.
    Functionals {
        #[arg(long)]
        measure: String,
        /// Relative quadrature tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Merger rates λ_{b,k}, the merger-size law and γ_b at one block count.
    Rates {
        #[arg(long)]
        measure: String,
        #[arg(long)]
        b: u64,
        #[arg(long)]
        k: Option<u64>,
    },
    /// Exact E[τ_b] for b = 2..n-max by the first-step recursion.
    Oracle {
        #[arg(long)]
        measure: String,
        #[arg(long = "n-max")]
        n_max: u64,
    },
    /// Absorption-time sample at one n.
    Simulate {
        #[arg(long)]
        measure: String,
        #[arg(long, value_parser = parse_count)]
        n: u64,
        #[command(flatten)]
        run: RunArgs,
        /// Also dump the event log of replicate 0 to path.csv.
        #[arg(long)]
        dump_path: bool,
    },
    /// τ_n / log n across an n grid.
    Lln {
        #[command(flatten)]
        grid: GridArgs,
        /// Exploratory statistic τ_n / (log n)^POWER (no reference value).
        #[arg(long)]
        power: Option<f64>,
    },
    /// (τ_n − b_n)/√log n against its normal limit.
    Clt {
        #[command(flatten)]
        grid: GridArgs,
    },
    /// sup |log N_n − Y_n| for the coupled coalescent and drifted subordinator.
    Coupling {
        #[command(flatten)]
        grid: GridArgs,
    },
    /// First-passage times of the drifted subordinator from z below x.
    Passage {
        #[arg(long)]
        measure: String,
        #[arg(long, allow_hyphen_values = true)]
        z: f64,
        #[arg(long, allow_hyphen_values = true)]
        x: f64,
        #[arg(long)]
        delta: Option<f64>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Centering constants b_n with their expansion in powers of f.
    Bn {
        #[arg(long)]
        measure: String,
        #[arg(long = "n-list", value_delimiter = ',', value_parser = parse_real_n)]
        n_list: Vec<f64>,
        #[arg(long, default_value_t = 2)]
        order: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    reps: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Overwrite an existing output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    measure: String,
    #[arg(long = "n-grid", value_delimiter = ',', value_parser = parse_count)]
    n_grid: Vec<u64>,
    #[arg(long)]
    delta: Option<f64>,
    #[command(flatten)]
    run: RunArgs,
}

/// Accepts `1000`, `1e6` and `1_000_000`.
fn parse_count(s: &str) -> std::result::Result<u64, String> {
    let clean = s.replace('_', "");
    if let Ok(n) = clean.parse::<u64>() {
        return Ok(n);
    }
    match clean.parse::<f64>() {
        Ok(x) if x >= 0.0 && x.fract() == 0.0 && x < 1.8e19 => Ok(x as u64),
        _ => Err(format!("{s:?} is not a non-negative integer")),
    }
}

fn parse_real_n(s: &str) -> std::result::Result<f64, String> {
    match s.replace('_', "").parse::<f64>() {
        Ok(x) if x >= 2.0 && x.is_finite() => Ok(x),
        _ => Err(format!("{s:?} is not a number >= 2")),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn print_flat(s: &FlatSummary) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, s)?;
    writeln!(out)?;
    Ok(())
}

fn csv_out() -> csv::Writer<std::io::Stdout> {
    csv::Writer::from_writer(std::io::stdout())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Functionals { measure, tol } => functionals(&parse_measure(&measure)?, tol),
        Command::Rates { measure, b, k } => rates(&parse_measure(&measure)?, b, k),
        Command::Oracle { measure, n_max } => {
            let m = parse_measure(&measure)?;
            let expect = with_threads(None, || exact_expected_absorption(&m, n_max))??;
            let mut w = csv_out();
            w.write_record(["n", "expected_tau"])?;
            for (b, e) in expect.iter().enumerate().skip(2) {
                w.write_record([b.to_string(), e.to_string()])?;
            }
            w.flush()?;
            Ok(())
        }
        Command::Simulate {
            measure,
            n,
            run,
            dump_path,
        } => {
            let cfg = ExperimentConfig::new(
                measure,
                ExperimentKind::Simulate,
                vec![n],
                run.reps,
                run.seed,
            );
            let result = experiment(&cfg, &run.out, run.force)?;
            if dump_path {
                let m = parse_measure(&cfg.measure)?;
                let path = CoalescentEngine::new(&m).simulate_replicate(n, cfg.seed, 0);
                path.write_csv(std::fs::File::create(run.out.join("path.csv"))?)?;
            }
            print_flat(&result)
        }
        Command::Lln { grid, power } => {
            let mut cfg = grid_config(&grid, ExperimentKind::Lln);
            cfg.power = power;
            print_flat(&experiment(&cfg, &grid.run.out, grid.run.force)?)
        }
        Command::Clt { grid } => {
            let cfg = grid_config(&grid, ExperimentKind::Clt);
            print_flat(&experiment(&cfg, &grid.run.out, grid.run.force)?)
        }
        Command::Coupling { grid } => {
            let cfg = grid_config(&grid, ExperimentKind::Coupling);
            print_flat(&experiment(&cfg, &grid.run.out, grid.run.force)?)
        }
        Command::Passage {
            measure,
            z,
            x,
            delta,
            run,
        } => {
            let mut cfg = ExperimentConfig::passage(measure, z, x, run.reps, run.seed);
            cfg.delta = delta;
            print_flat(&experiment(&cfg, &run.out, run.force)?)
        }
        Command::Bn {
            measure,
            n_list,
            order,
        } => bn_table(&parse_measure(&measure)?, &n_list, order),
    }
}

fn grid_config(g: &GridArgs, kind: ExperimentKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(
        g.measure.clone(),
        kind,
        g.n_grid.clone(),
        g.run.reps,
        g.run.seed,
    );
    cfg.delta = g.delta;
    cfg
}

fn experiment(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<FlatSummary> {
    cfg.validate()?;
    // Fail before simulating rather than after.
    if !force
        && coalab::harness::OUTPUT_FILES
            .iter()
            .any(|f| out.join(f).exists())
    {
        return Err(Error::OutputExists(out.display().to_string()));
    }
    let result = run_experiment(cfg)?;
    write_outputs(&result, out, force)?;
    Ok(result.summary)
}

fn functionals(m: &LambdaMeasure, tol: Option<f64>) -> Result<()> {
    let cfg = tol.map_or_else(QuadConfig::default, |t| {
        QuadConfig::default().with_rel_tol(t)
    });
    let mut s = FlatSummary::new();
    s.insert("measure".into(), Value::from(m.spec()));
    s.insert("total_mass".into(), encode(total_mass(m).value));
    let mu = mu_with(m, &cfg)?;
    let sigma2 = sigma2_with(m, &cfg)?;
    let dust = dust_integral_with(m, &cfg)?;
    s.insert("mu".into(), encode(mu.value));
    s.insert("mu_abs_error".into(), encode(mu.abs_error));
    s.insert("sigma2".into(), encode(sigma2.value));
    s.insert("sigma2_abs_error".into(), encode(sigma2.abs_error));
    s.insert("dust".into(), encode(dust.value));
    s.insert("dust_abs_error".into(), encode(dust.abs_error));
    if dust.is_finite() {
        s.insert("f0".into(), encode(f_eval(m, 0.0)?));
        let c = prop2_c(m)?;
        s.insert(
            "c_estimate".into(),
            encode(if c.converged { c.c } else { f64::INFINITY }),
        );
        s.insert("c_converged".into(), Value::from(c.converged));
        if mu.is_finite() {
            s.insert("kappa".into(), encode(kappa(m)?));
        }
    }
    let p = profile(m)?;
    if let Some(v) = p.clt_variance {
        s.insert("clt_variance".into(), encode(v));
    }
    print_flat(&s)
}

fn rates(m: &LambdaMeasure, b: u64, k: Option<u64>) -> Result<()> {
    if b < 2 {
        return Err(Error::InvalidArgument(format!("need b >= 2, got {b}")));
    }
    let total = total_merger_rate(m, b)?;
    let gamma = gamma_b(m, b)?;
    let mut w = csv_out();
    w.write_record([
        "b",
        "k",
        "lambda_bk",
        "weighted_rate",
        "pmf",
        "total_rate",
        "gamma_b",
    ])?;
    let mut row = |k: u64, pmf: f64| -> Result<()> {
        let fields = [
            b as f64,
            k as f64,
            lambda_bk(m, b, k)?,
            weighted_rate(m, b, k)?,
            pmf,
            total,
            gamma,
        ];
        w.write_record(fields.iter().map(f64::to_string))?;
        Ok(())
    };
    match k {
        Some(k) => {
            if !(2..=b).contains(&k) {
                return Err(Error::InvalidArgument(format!(
                    "need 2 <= k <= b, got k = {k}"
                )));
            }
            let pmf = weighted_rate(m, b, k)? / total;
            row(k, pmf)?;
        }
        None => {
            let pmf = merger_size_pmf(m, b)?;
            for (k, p) in (2..=b).zip(pmf) {
                row(k, p)?;
            }
        }
    }
    w.flush()?;
    if k.is_none() && b >= 16 {
        let cdi = cdi_diagnostic(m, b)?;
        eprintln!(
            "coming down from infinity (heuristic): {} (partial sum {})",
            cdi.verdict, cdi.partial_sum
        );
    }
    Ok(())
}

fn bn_table(m: &LambdaMeasure, n_list: &[f64], order: usize) -> Result<()> {
    let k = kappa(m)?;
    let c = prop2_c(m)?;
    if !c.converged {
        eprintln!("no √log-centering; use b_n directly");
    }
    let c_value = if c.converged { c.c } else { f64::INFINITY };
    let mut w = csv_out();
    let mut header: Vec<String> = ["n", "log_n", "kappa", "b_n"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..=order).map(|j| format!("term{j}")));
    header.push("c_estimate".into());
    w.write_record(&header)?;
    for &n in n_list {
        let e = bn_expansion(m, n, order)?;
        let mut row = vec![
            n.to_string(),
            e.log_n.to_string(),
            k.to_string(),
            b_n(m, n)?.to_string(),
        ];
        row.extend(e.terms.iter().map(f64::to_string));
        row.push(if c_value.is_finite() {
            c_value.to_string()
        } else {
            "inf".into()
        });
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
