//! Reproducible Monte Carlo experiments behind the CLI.
//!
//! A run produces raw samples (one row per replicate) and a flat summary that
//! is a pure function of those samples and the configuration, so it can be
//! recomputed from `samples.csv` alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde_json::Value;

use crate::asymptotics::{beta, clt_params, kappa};
use crate::coalescent::{exact_expected_absorption, CoalescentEngine};
use crate::error::{Error, Result};
use crate::measure::{dust_integral, mu, parse_measure, sigma2, LambdaMeasure};
use crate::stats::{ks_statistic, qq_table, Summary};
use crate::subordinator::{default_delta, CoupledEngine, DriftedEngine, JumpMeasure};

/// Largest `n` checked against the exact-expectation oracle.
pub const ORACLE_GATE_MAX_N: u64 = 200;
/// Agreement required by the oracle gate, in standard errors.
pub const ORACLE_GATE_SE: f64 = 4.0;
pub const THREADS_ENV: &str = "COALAB_THREADS";
const QQ_POINTS: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Simulate,
    Lln,
    Clt,
    Coupling,
    Passage,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Lln => "lln",
            ExperimentKind::Clt => "clt",
            ExperimentKind::Coupling => "coupling",
            ExperimentKind::Passage => "passage",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "simulate" => ExperimentKind::Simulate,
            "lln" => ExperimentKind::Lln,
            "clt" => ExperimentKind::Clt,
            "coupling" => ExperimentKind::Coupling,
            "passage" => ExperimentKind::Passage,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown experiment kind {s:?}"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub measure: String,
    pub kind: ExperimentKind,
    /// Empty for passage experiments.
    pub n_grid: Vec<u64>,
    pub reps: usize,
    pub seed: u64,
    /// Worker threads; [`THREADS_ENV`] takes precedence. Never affects results.
    pub threads: Option<usize>,
    /// Small-jump truncation level; defaults to [`default_delta`].
    pub delta: Option<f64>,
    pub z: Option<f64>,
    pub x: Option<f64>,
    /// Exploratory LLN statistic `τ_n/(log n)^power` (no reference value).
    pub power: Option<f64>,
}

impl ExperimentConfig {
    pub fn new(
        measure: impl Into<String>,
        kind: ExperimentKind,
        n_grid: Vec<u64>,
        reps: usize,
        seed: u64,
    ) -> Self {
        ExperimentConfig {
            measure: measure.into(),
            kind,
            n_grid,
            reps,
            seed,
            threads: None,
            delta: None,
            z: None,
            x: None,
            power: None,
        }
    }

    pub fn passage(measure: impl Into<String>, z: f64, x: f64, reps: usize, seed: u64) -> Self {
        ExperimentConfig {
            z: Some(z),
            x: Some(x),
            ..Self::new(measure, ExperimentKind::Passage, vec![], reps, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.reps < 2 {
            return bad(format!("reps must be at least 2, got {}", self.reps));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                return bad(format!("delta must be positive, got {d}"));
            }
        }
        if self.kind == ExperimentKind::Passage {
            match (self.z, self.x) {
                (Some(z), Some(x)) if z.is_finite() && x.is_finite() => return Ok(()),
                _ => return bad("passage experiments need finite z and x".into()),
            }
        }
        if self.n_grid.is_empty() {
            return bad("n grid is empty".into());
        }
        if self.n_grid.iter().any(|&n| n < 2) {
            return bad("every n must be at least 2".into());
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("n grid must be strictly increasing".into());
        }
        if self.power.is_some() && self.kind != ExperimentKind::Lln {
            return bad("--power only applies to lln".into());
        }
        Ok(())
    }

    /// `key = value` lines; the software fingerprint is appended by [`write_outputs`].
    pub fn echo(&self) -> String {
        let opt = |x: Option<f64>| x.map_or("default".to_string(), |v| v.to_string());
        let grid: Vec<String> = self.n_grid.iter().map(u64::to_string).collect();
        let mut s = String::new();
        let _ = writeln!(s, "kind = {}", self.kind.name());
        let _ = writeln!(s, "measure = {}", self.measure);
        let _ = writeln!(s, "n_grid = {}", grid.join(","));
        let _ = writeln!(s, "reps = {}", self.reps);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(
            s,
            "threads = {}",
            self.threads
                .map_or("default".to_string(), |t| t.to_string())
        );
        let _ = writeln!(s, "delta = {}", opt(self.delta));
        let _ = writeln!(s, "z = {}", opt(self.z));
        let _ = writeln!(s, "x = {}", opt(self.x));
        let _ = writeln!(s, "power = {}", opt(self.power));
        s
    }
}

/// A named CSV table derived from the samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub type FlatSummary = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub summary: FlatSummary,
    pub tables: Vec<Table>,
}

impl ExperimentResult {
    /// A numeric summary entry; `"inf"` decodes to `+∞`.
    pub fn get(&self, key: &str) -> Option<f64> {
        decode(self.summary.get(key)?)
    }

    pub fn flag(&self, key: &str) -> Option<bool> {
        self.summary.get(key)?.as_bool()
    }

    /// Column `name` restricted to rows whose first column equals `n`.
    pub fn column_at(&self, name: &str, n: u64) -> Vec<f64> {
        let c = self
            .columns
            .iter()
            .position(|x| x == name)
            .expect("known column");
        self.rows
            .iter()
            .filter(|r| r[0] == n as f64)
            .map(|r| r[c])
            .collect()
    }
}

pub fn encode(x: f64) -> Value {
    if x.is_nan() {
        Value::from("nan")
    } else if x == f64::INFINITY {
        Value::from("inf")
    } else if x == f64::NEG_INFINITY {
        Value::from("-inf")
    } else {
        Value::from(x)
    }
}

pub fn decode(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) if s == "inf" => Some(f64::INFINITY),
        Value::String(s) if s == "-inf" => Some(f64::NEG_INFINITY),
        Value::String(s) if s == "nan" => Some(f64::NAN),
        _ => None,
    }
}

/// Thread budget: [`THREADS_ENV`] if set, else the configured value.
pub fn thread_budget(configured: Option<usize>) -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(t) if t > 0 => Ok(Some(t)),
            _ => Err(Error::InvalidArgument(format!(
                "{THREADS_ENV} must be a positive integer, got {s:?}"
            ))),
        },
        Err(_) => Ok(configured),
    }
}

/// Runs `work` on a pool of the configured size (or the global pool).
pub fn with_threads<T: Send>(
    configured: Option<usize>,
    work: impl FnOnce() -> T + Send,
) -> Result<T> {
    match thread_budget(configured)? {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(work))
        }
        None => Ok(work()),
    }
}

/// Checks a sample of `τ_n` against `E[τ_n]` from the first-step recursion.
pub fn oracle_gate(m: &LambdaMeasure, n: u64, taus: &[f64]) -> Result<()> {
    let exact = exact_expected_absorption(m, n)?[n as usize];
    let s = Summary::new(taus)?;
    if !s.agrees_with(exact, ORACLE_GATE_SE) {
        return Err(Error::OracleGate(format!(
            "n = {n}: Monte Carlo mean {:.6} ± {:.6} vs exact {exact:.6} ({:.2} standard errors)",
            s.mean,
            s.std_error,
            (s.mean - exact) / s.std_error
        )));
    }
    Ok(())
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    with_threads(cfg.threads, || run_inner(cfg))?
}

pub fn run_lln(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    expect_kind(cfg, ExperimentKind::Lln)?;
    run_experiment(cfg)
}

pub fn run_clt(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    expect_kind(cfg, ExperimentKind::Clt)?;
    run_experiment(cfg)
}

pub fn run_coupling(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    expect_kind(cfg, ExperimentKind::Coupling)?;
    run_experiment(cfg)
}

pub fn run_passage(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    expect_kind(cfg, ExperimentKind::Passage)?;
    run_experiment(cfg)
}

fn expect_kind(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    if cfg.kind != kind {
        return Err(Error::InvalidArgument(format!(
            "expected a {} config, got {}",
            kind.name(),
            cfg.kind.name()
        )));
    }
    Ok(())
}

fn resolve_delta(m: &LambdaMeasure, cfg: &ExperimentConfig) -> Result<f64> {
    cfg.delta.map_or_else(|| default_delta(m), Ok)
}

fn columns_for(kind: ExperimentKind) -> Vec<String> {
    let cols: &[&str] = match kind {
        ExperimentKind::Simulate => &["replicate", "tau"],
        ExperimentKind::Lln | ExperimentKind::Clt => &["n", "replicate", "tau", "stat"],
        ExperimentKind::Coupling => &["n", "replicate", "tau", "sup_gap", "y_at_tau"],
        ExperimentKind::Passage => &["replicate", "z", "x", "T"],
    };
    cols.iter().map(|s| s.to_string()).collect()
}

fn run_inner(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let m = parse_measure(&cfg.measure)?;
    let mut rows = Vec::new();
    let gate = |n: u64, taus: &[f64]| {
        if n <= ORACLE_GATE_MAX_N {
            oracle_gate(&m, n, taus)
        } else {
            Ok(())
        }
    };
    match cfg.kind {
        ExperimentKind::Simulate | ExperimentKind::Lln | ExperimentKind::Clt => {
            if cfg.kind == ExperimentKind::Clt {
                clt_params(&m)?;
            }
            let engine = CoalescentEngine::new(&m);
            for &n in &cfg.n_grid {
                let taus = engine.absorption_sample(n, cfg.reps, cfg.seed);
                gate(n, &taus)?;
                let stat = lln_or_clt_stat(&m, cfg, n)?;
                for (j, &tau) in taus.iter().enumerate() {
                    rows.push(match cfg.kind {
                        ExperimentKind::Simulate => vec![j as f64, tau],
                        _ => vec![n as f64, j as f64, tau, stat(tau)],
                    });
                }
            }
        }
        ExperimentKind::Coupling => {
            let delta = resolve_delta(&m, cfg)?;
            let engine = CoupledEngine::new(&m, delta, *cfg.n_grid.last().expect("validated"))?;
            for &n in &cfg.n_grid {
                let out = engine.sample(n, cfg.reps, cfg.seed)?;
                let taus: Vec<f64> = out.iter().map(|o| o.tau).collect();
                gate(n, &taus)?;
                rows.extend(
                    out.iter()
                        .enumerate()
                        .map(|(j, o)| vec![n as f64, j as f64, o.tau, o.sup_gap, o.y_at_tau]),
                );
            }
        }
        ExperimentKind::Passage => {
            let (z, x) = (cfg.z.expect("validated"), cfg.x.expect("validated"));
            let delta = resolve_delta(&m, cfg)?;
            let engine = DriftedEngine::new(&m, delta, z.max(x) + 2.0)?;
            let ts = engine.passage_sample(z, x, cfg.reps, cfg.seed)?;
            rows.extend(ts.iter().enumerate().map(|(j, &t)| vec![j as f64, z, x, t]));
        }
    }
    let columns = columns_for(cfg.kind);
    let (summary, tables) = summarize(cfg, &columns, &rows)?;
    Ok(ExperimentResult {
        config: cfg.clone(),
        columns,
        rows,
        summary,
        tables,
    })
}

/// The per-replicate statistic of an lln or clt run at `n`.
fn lln_or_clt_stat(
    m: &LambdaMeasure,
    cfg: &ExperimentConfig,
    n: u64,
) -> Result<Box<dyn Fn(f64) -> f64>> {
    let log_n = (n as f64).ln();
    Ok(match cfg.kind {
        ExperimentKind::Clt => {
            let b = beta(m, log_n)?;
            let scale = log_n.sqrt();
            Box::new(move |tau| (tau - b) / scale)
        }
        _ => {
            let denom = log_n.powf(cfg.power.unwrap_or(1.0));
            Box::new(move |tau| tau / denom)
        }
    })
}

fn put(s: &mut FlatSummary, key: impl Into<String>, x: f64) {
    s.insert(key.into(), encode(x));
}

fn put_summary(s: &mut FlatSummary, prefix: &str, sum: &Summary) {
    put(s, format!("{prefix}mean"), sum.mean);
    put(s, format!("{prefix}variance"), sum.variance);
    put(s, format!("{prefix}std_error"), sum.std_error);
    put(s, format!("{prefix}min"), sum.min);
    put(s, format!("{prefix}max"), sum.max);
    for &(q, v) in &sum.percentiles {
        put(s, format!("{prefix}p{:02}", (q * 100.0).round() as u32), v);
    }
}

fn column(columns: &[String], rows: &[Vec<f64>], name: &str, n: Option<u64>) -> Result<Vec<f64>> {
    let c = columns
        .iter()
        .position(|x| x == name)
        .ok_or_else(|| Error::InvalidArgument(format!("samples lack column {name}")))?;
    Ok(rows
        .iter()
        .filter(|r| n.is_none_or(|n| r[0] == n as f64))
        .map(|r| r[c])
        .collect())
}

/// Non-increasing sequence (ties allowed).
fn non_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0])
}

/// Summary and derived tables from raw samples; deterministic in its inputs.
pub fn summarize(
    cfg: &ExperimentConfig,
    columns: &[String],
    rows: &[Vec<f64>],
) -> Result<(FlatSummary, Vec<Table>)> {
    let m = parse_measure(&cfg.measure)?;
    let mut s = FlatSummary::new();
    let mut tables = Vec::new();
    s.insert("kind".into(), Value::from(cfg.kind.name()));
    s.insert("measure".into(), Value::from(cfg.measure.clone()));
    put(&mut s, "reps", cfg.reps as f64);
    put(&mut s, "seed", cfg.seed as f64);
    let mu_value = mu(&m)?.value;
    put(&mut s, "mu", mu_value);
    put(&mut s, "sigma2", sigma2(&m)?.value);
    let oracle_top = cfg
        .n_grid
        .iter()
        .copied()
        .filter(|&n| n <= ORACLE_GATE_MAX_N)
        .max();
    let oracle = match oracle_top {
        Some(top) if cfg.kind != ExperimentKind::Passage => {
            Some(exact_expected_absorption(&m, top.max(2))?)
        }
        _ => None,
    };
    let per_n_tau = |s: &mut FlatSummary, n: u64, taus: &[f64]| -> Result<()> {
        let t = Summary::new(taus)?;
        put_summary(s, &format!("n{n}.tau."), &t);
        if let Some(exact) = oracle.as_ref().filter(|_| n <= ORACLE_GATE_MAX_N) {
            let e = exact[n as usize];
            put(s, format!("n{n}.oracle"), e);
            put(s, format!("n{n}.oracle_z"), (t.mean - e) / t.std_error);
        }
        Ok(())
    };

    match cfg.kind {
        ExperimentKind::Simulate => {
            let n = cfg.n_grid[0];
            put(&mut s, "n", n as f64);
            per_n_tau(&mut s, n, &column(columns, rows, "tau", None)?)?;
        }
        ExperimentKind::Lln => {
            let exploratory = cfg.power.is_some();
            s.insert("exploratory".into(), Value::from(exploratory));
            put(&mut s, "power", cfg.power.unwrap_or(1.0));
            let reference = if mu_value.is_finite() {
                1.0 / mu_value
            } else {
                0.0
            };
            if !exploratory {
                put(&mut s, "reference", reference);
            }
            let mut gaps = Vec::new();
            for &n in &cfg.n_grid {
                per_n_tau(&mut s, n, &column(columns, rows, "tau", Some(n))?)?;
                let st = Summary::new(&column(columns, rows, "stat", Some(n))?)?;
                put_summary(&mut s, &format!("n{n}.stat."), &st);
                if !exploratory {
                    let gap = if reference > 0.0 {
                        (st.mean - reference).abs() / reference
                    } else {
                        st.mean.abs()
                    };
                    put(&mut s, format!("n{n}.gap"), gap);
                    gaps.push(gap);
                }
            }
            if !exploratory {
                s.insert("trend_monotone".into(), Value::from(non_increasing(&gaps)));
            }
        }
        ExperimentKind::Clt => {
            let clt = clt_params(&m)?;
            put(&mut s, "clt_variance", clt.variance);
            put(&mut s, "kappa", kappa(&m)?);
            let mut dev = Vec::new();
            for &n in &cfg.n_grid {
                per_n_tau(&mut s, n, &column(columns, rows, "tau", Some(n))?)?;
                let stat = column(columns, rows, "stat", Some(n))?;
                let st = Summary::new(&stat)?;
                put_summary(&mut s, &format!("n{n}.stat."), &st);
                put(&mut s, format!("n{n}.b_n"), beta(&m, (n as f64).ln())?);
                put(
                    &mut s,
                    format!("n{n}.variance_ratio"),
                    st.variance / clt.variance,
                );
                put(&mut s, format!("n{n}.mean_z"), st.mean / st.std_error);
                let ks = ks_statistic(&stat, clt.variance)?;
                put(&mut s, format!("n{n}.ks_d"), ks.d);
                put(&mut s, format!("n{n}.ks_p"), ks.p_value);
                dev.push((st.variance / clt.variance - 1.0).abs());
            }
            s.insert(
                "trend_variance_monotone".into(),
                Value::from(non_increasing(&dev)),
            );
            let top = *cfg.n_grid.last().expect("validated");
            let qq = qq_table(
                &column(columns, rows, "stat", Some(top))?,
                clt.variance,
                QQ_POINTS,
            )?;
            tables.push(Table {
                name: "qq.csv".into(),
                columns: vec!["prob".into(), "theoretical".into(), "empirical".into()],
                rows: qq
                    .iter()
                    .map(|r| vec![r.prob, r.theoretical, r.empirical])
                    .collect(),
            });
        }
        ExperimentKind::Coupling => {
            let delta = resolve_delta(&m, cfg)?;
            put_jump_measure(&mut s, &m, delta)?;
            let mut p95 = Vec::new();
            for &n in &cfg.n_grid {
                per_n_tau(&mut s, n, &column(columns, rows, "tau", Some(n))?)?;
                let gap = Summary::new(&column(columns, rows, "sup_gap", Some(n))?)?;
                put_summary(&mut s, &format!("n{n}.sup_gap."), &gap);
                let y = Summary::new(&column(columns, rows, "y_at_tau", Some(n))?)?;
                put_summary(&mut s, &format!("n{n}.y_at_tau."), &y);
                p95.push(gap.percentile(0.95).expect("reported level"));
            }
            let (lo, hi) = p95.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            });
            put(&mut s, "sup_gap_p95_spread", hi / lo - 1.0);
        }
        ExperimentKind::Passage => {
            let (z, x) = (cfg.z.expect("validated"), cfg.x.expect("validated"));
            let delta = resolve_delta(&m, cfg)?;
            put_jump_measure(&mut s, &m, delta)?;
            put(&mut s, "z", z);
            put(&mut s, "x", x);
            let ts = column(columns, rows, "T", None)?;
            let t = Summary::new(&ts)?;
            put_summary(&mut s, "T.", &t);
            if mu_value.is_finite() && z > x {
                let reference = 1.0 / mu_value;
                let ratio = t.mean / (z - x);
                put(&mut s, "mean_over_distance", ratio);
                put(&mut s, "reference", reference);
                put(
                    &mut s,
                    "relative_error",
                    (ratio - reference).abs() / reference,
                );
            }
            if let (Ok(clt), true) = (clt_params(&m), z > x) {
                if dust_integral(&m)?.is_finite() {
                    let centre = beta(&m, z)? - beta(&m, x)?;
                    let std: Vec<f64> = ts.iter().map(|t| (t - centre) / z.sqrt()).collect();
                    let st = Summary::new(&std)?;
                    put(&mut s, "beta", centre);
                    put(&mut s, "clt_variance", clt.variance);
                    put_summary(&mut s, "standardized.", &st);
                    let ks = ks_statistic(&std, clt.variance)?;
                    put(&mut s, "ks_d", ks.d);
                    put(&mut s, "ks_p", ks.p_value);
                }
            }
        }
    }
    Ok((s, tables))
}

fn put_jump_measure(s: &mut FlatSummary, m: &LambdaMeasure, delta: f64) -> Result<()> {
    let j = JumpMeasure::new(m, delta)?;
    put(s, "delta", j.delta);
    put(s, "m_delta", j.m_delta);
    put(s, "v_delta", j.v_delta);
    Ok(())
}

fn software_fingerprint(cfg: &ExperimentConfig) -> String {
    let fp = parse_measure(&cfg.measure)
        .map(|m| m.fingerprint())
        .unwrap_or_default();
    format!("coalab {} measure {fp}", env!("CARGO_PKG_VERSION"))
}

pub const OUTPUT_FILES: [&str; 3] = ["config.echo", "samples.csv", "summary.json"];

fn write_table(path: &Path, columns: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(columns)?;
    for r in rows {
        w.write_record(r.iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `config.echo`, `samples.csv`, `summary.json` and derived tables into `dir`.
pub fn write_outputs(result: &ExperimentResult, dir: &Path, force: bool) -> Result<()> {
    if !force && OUTPUT_FILES.iter().any(|f| dir.join(f).exists()) {
        return Err(Error::OutputExists(dir.display().to_string()));
    }
    std::fs::create_dir_all(dir)?;
    let echo = format!(
        "{}fingerprint = {}\n",
        result.config.echo(),
        software_fingerprint(&result.config)
    );
    std::fs::write(dir.join("config.echo"), echo)?;
    write_table(&dir.join("samples.csv"), &result.columns, &result.rows)?;
    for t in &result.tables {
        write_table(&dir.join(&t.name), &t.columns, &t.rows)?;
    }
    let mut json = serde_json::to_string_pretty(&result.summary)?;
    json.push('\n');
    std::fs::write(dir.join("summary.json"), json)?;
    Ok(())
}

/// Reads `samples.csv` back as `(columns, rows)`.
pub fn read_samples(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let columns = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("bad sample value {v:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((columns, rows))
}

pub fn read_summary(path: &Path) -> Result<FlatSummary> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let ok = ExperimentConfig::new("atom:0.5:1", ExperimentKind::Lln, vec![10, 100], 10, 1);
        assert!(ok.validate().is_ok());
        for bad in [
            ExperimentConfig {
                reps: 1,
                ..ok.clone()
            },
            ExperimentConfig {
                n_grid: vec![100, 10],
                ..ok.clone()
            },
            ExperimentConfig {
                n_grid: vec![1, 10],
                ..ok.clone()
            },
            ExperimentConfig {
                n_grid: vec![],
                ..ok.clone()
            },
            ExperimentConfig {
                delta: Some(0.0),
                ..ok.clone()
            },
            ExperimentConfig {
                kind: ExperimentKind::Clt,
                power: Some(0.5),
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        assert!(ExperimentConfig::passage("atom:0.5:1", 5.0, 0.0, 10, 1)
            .validate()
            .is_ok());
    }

    #[test]
    fn infinity_is_encoded_as_text() {
        assert_eq!(encode(f64::INFINITY), Value::from("inf"));
        assert_eq!(decode(&Value::from("inf")), Some(f64::INFINITY));
        assert_eq!(decode(&encode(0.25)), Some(0.25));
    }

    #[test]
    fn lln_on_star_coalescent_uses_zero_reference() {
        let cfg = ExperimentConfig::new("atom:1:1", ExperimentKind::Lln, vec![50, 1000], 400, 3);
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.get("mu"), Some(f64::INFINITY));
        assert_eq!(r.get("reference"), Some(0.0));
        let mean = r.get("n1000.stat.mean").unwrap();
        assert!((mean * 1000f64.ln() - 1.0).abs() < 0.2, "{mean}");
    }

    #[test]
    fn clt_refuses_infinite_variance() {
        let cfg = ExperimentConfig::new("atom:1:1", ExperimentKind::Clt, vec![1000], 10, 3);
        assert!(matches!(run_experiment(&cfg), Err(Error::Domain(_))));
    }

    #[test]
    fn oracle_gate_rejects_a_wrong_sample() {
        let m = parse_measure("atom:0:1").unwrap();
        let wrong = vec![2.5; 100]
            .into_iter()
            .enumerate()
            .map(|(i, t)| t + 1e-3 * i as f64)
            .collect::<Vec<_>>();
        assert!(matches!(
            oracle_gate(&m, 10, &wrong),
            Err(Error::OracleGate(_))
        ));
    }
}
