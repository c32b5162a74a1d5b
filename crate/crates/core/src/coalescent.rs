//! Exact simulation of the block-counting process `N_n(t)` and a
//! first-step oracle for `E[τ_n]`.
//!
//! At state `b` the effective merger events form a Poisson process with
//! intensity `h_b(p) Λ(dp)/p²`, `h_b(p) = P(Binomial(b,p) >= 2)`. Atoms enter
//! with their exact weights; the density part is sampled by thinning a
//! dominating envelope, so no per-state quadrature is needed. Given the merger
//! location, the merger size is `K ~ Binomial(b,p)` conditioned on `K >= 2`.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Hypergeometric};
use rayon::prelude::*;
use serde::Serialize;

use crate::binomial::{hit2_rate, pairs, sample_hits_at_least_two};
use crate::envelope::{Envelope, Level};
use crate::error::{Error, Result};
use crate::measure::{LambdaMeasure, Pt, Range};
use crate::quadrature::{QuadConfig, Tail};
use crate::rates::MergerRateTable;
use crate::rng::{stream, Domain};

/// Which part of Λ produced a merger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Kingman,
    Star,
    Atom,
    Density,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MergerEvent {
    pub t: f64,
    pub b_before: u64,
    pub k: u64,
    /// Merger location; 0 for the Kingman component, 1 for the star component.
    pub p: f64,
    pub source: Source,
}

/// Event history of one run from `n` blocks to absorption.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoalescentPath {
    pub n: u64,
    pub events: Vec<MergerEvent>,
    pub tau: f64,
    pub rng_seed: u64,
    pub measure_fingerprint: String,
}

impl CoalescentPath {
    /// Checks the structural invariants: increasing times, consistent block counts,
    /// `2 <= k <= b`, absorption at the last event.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let mut b = self.n;
        let mut last_t = 0.0;
        for (i, e) in self.events.iter().enumerate() {
            if e.b_before != b {
                return Err(format!(
                    "event {i}: b_before {} but chain is at {b}",
                    e.b_before
                ));
            }
            if !(2..=b).contains(&e.k) {
                return Err(format!("event {i}: merger size {} with {b} blocks", e.k));
            }
            if !(e.t > last_t || (i == 0 && e.t >= 0.0)) {
                return Err(format!("event {i}: time {} not after {last_t}", e.t));
            }
            last_t = e.t;
            b -= e.k - 1;
        }
        if b != 1 {
            return Err(format!("path ends with {b} blocks"));
        }
        if self.events.last().map(|e| e.t) != Some(self.tau) {
            return Err("tau differs from the last event time".into());
        }
        Ok(())
    }

    /// Writes `t,b_before,k,p`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "b_before", "k", "p"])?;
        for e in &self.events {
            w.write_record([
                e.t.to_string(),
                e.b_before.to_string(),
                e.k.to_string(),
                e.p.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Rates of the mixture components at one state.
#[derive(Debug, Clone)]
pub(crate) struct StateRates {
    pub b: u64,
    kingman: f64,
    star: f64,
    /// Cumulative atom rates.
    atom_cum: Vec<f64>,
    level: Option<Level>,
    pub total: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Merger {
    pub k: u64,
    pub pt: Pt,
    pub source: Source,
}

/// Immutable simulator for one measure; cheap to share across threads.
#[derive(Debug, Clone)]
pub struct CoalescentEngine {
    measure: LambdaMeasure,
    kingman: f64,
    star: f64,
    atoms: Vec<(Pt, f64)>,
    envelope: Option<Envelope>,
}

impl CoalescentEngine {
    pub fn new(m: &LambdaMeasure) -> Self {
        CoalescentEngine {
            measure: m.clone(),
            kingman: m.atom_at_zero(),
            star: m.atom_at_one(),
            atoms: m
                .interior_atoms()
                .iter()
                .map(|a| (Pt::at(a.location), a.mass))
                .collect(),
            envelope: Envelope::new(m, None, None),
        }
    }

    /// Engine driven only by the part of Λ below `hi` (compared in `v = log 1/(1-p)`).
    pub(crate) fn below(m: &LambdaMeasure, hi: Pt) -> Self {
        CoalescentEngine {
            measure: m.clone(),
            kingman: m.atom_at_zero(),
            star: 0.0,
            atoms: m
                .interior_atoms()
                .iter()
                .map(|a| (Pt::at(a.location), a.mass))
                .filter(|(pt, _)| pt.v < hi.v)
                .collect(),
            envelope: Envelope::new(m, None, Some(hi)),
        }
    }

    pub fn measure(&self) -> &LambdaMeasure {
        &self.measure
    }

    pub(crate) fn state(&self, b: u64) -> StateRates {
        let kingman = self.kingman * pairs(b);
        let star = self.star;
        let mut acc = 0.0;
        let atom_cum: Vec<f64> = self
            .atoms
            .iter()
            .map(|(pt, w)| {
                acc += w * hit2_rate(b, pt);
                acc
            })
            .collect();
        let level = self.envelope.as_ref().map(|e| e.level(pairs(b)));
        let total = kingman + star + acc + level.map_or(0.0, |l| l.total);
        StateRates {
            b,
            kingman,
            star,
            atom_cum,
            level,
            total,
        }
    }

    /// Waits for the next merger at state `st.b`, returning the elapsed time.
    pub(crate) fn next_merger<R: Rng + ?Sized>(
        &self,
        st: &StateRates,
        rng: &mut R,
    ) -> (f64, Merger) {
        let b = st.b;
        let mut elapsed = 0.0;
        loop {
            let e: f64 = Exp1.sample(rng);
            elapsed += e / st.total;
            let mut x = rng.random::<f64>() * st.total;
            if x < st.kingman {
                return (
                    elapsed,
                    Merger {
                        k: 2,
                        pt: Pt::from_p(0.0),
                        source: Source::Kingman,
                    },
                );
            }
            x -= st.kingman;
            if x < st.star {
                return (
                    elapsed,
                    Merger {
                        k: b,
                        pt: Pt::from_q(0.0),
                        source: Source::Star,
                    },
                );
            }
            x -= st.star;
            let atom_total = st.atom_cum.last().copied().unwrap_or(0.0);
            if x < atom_total {
                let i = st
                    .atom_cum
                    .partition_point(|&c| c <= x)
                    .min(self.atoms.len() - 1);
                let pt = self.atoms[i].0;
                return (
                    elapsed,
                    Merger {
                        k: sample_hits_at_least_two(b, &pt, rng),
                        pt,
                        source: Source::Atom,
                    },
                );
            }
            let (Some(env), Some(level)) = (&self.envelope, &st.level) else {
                continue;
            };
            let prop = env.propose(level, rng);
            let target = self.measure.density_at(&prop.pt) * hit2_rate(b, &prop.pt);
            if rng.random::<f64>() * prop.envelope < target {
                let k = if prop.pt.p > 0.0 {
                    sample_hits_at_least_two(b, &prop.pt, rng)
                } else {
                    2
                };
                return (
                    elapsed,
                    Merger {
                        k,
                        pt: prop.pt,
                        source: Source::Density,
                    },
                );
            }
        }
    }

    /// Runs one path from `n` blocks, reporting each merger to `on_event`; returns `τ_n`.
    pub fn run<R: Rng + ?Sized>(
        &self,
        n: u64,
        rng: &mut R,
        mut on_event: impl FnMut(MergerEvent),
    ) -> f64 {
        let mut b = n;
        let mut t = 0.0;
        while b > 1 {
            let st = self.state(b);
            let (dt, merger) = self.next_merger(&st, rng);
            t += dt;
            on_event(MergerEvent {
                t,
                b_before: b,
                k: merger.k,
                p: merger.pt.p,
                source: merger.source,
            });
            b -= merger.k - 1;
        }
        t
    }

    /// Path for replicate `replicate` of the stream family `(seed, n)`.
    pub fn simulate_replicate(&self, n: u64, seed: u64, replicate: u64) -> CoalescentPath {
        let mut rng = stream(seed, Domain::Coalescent, n, replicate);
        let mut events = Vec::new();
        let tau = self.run(n, &mut rng, |e| events.push(e));
        let path = CoalescentPath {
            n,
            events,
            tau,
            rng_seed: seed,
            measure_fingerprint: self.measure.fingerprint(),
        };
        debug_assert_eq!(path.validate(), Ok(()));
        path
    }

    pub fn simulate_path(&self, n: u64, seed: u64) -> CoalescentPath {
        self.simulate_replicate(n, seed, 0)
    }

    /// `τ_n` of replicate `replicate`; identical to the `tau` of [`Self::simulate_replicate`].
    pub fn absorption_time(&self, n: u64, seed: u64, replicate: u64) -> f64 {
        let mut rng = stream(seed, Domain::Coalescent, n, replicate);
        self.run(n, &mut rng, |_| {})
    }

    /// `reps` independent absorption times, in replicate order.
    pub fn absorption_sample(&self, n: u64, reps: usize, seed: u64) -> Vec<f64> {
        (0..reps as u64)
            .into_par_iter()
            .map(|j| self.absorption_time(n, seed, j))
            .collect()
    }

    /// Size of the first merger from `b` blocks (replicate-indexed), for merger-law tests.
    pub fn first_merger_size(&self, b: u64, seed: u64, replicate: u64) -> u64 {
        let mut rng = stream(seed, Domain::Coalescent, b, replicate);
        self.next_merger(&self.state(b), &mut rng).1.k
    }
}

pub fn simulate_path(m: &LambdaMeasure, n: u64, seed: u64) -> Result<CoalescentPath> {
    check_n(n)?;
    Ok(CoalescentEngine::new(m).simulate_path(n, seed))
}

pub fn absorption_sample(m: &LambdaMeasure, n: u64, reps: usize, seed: u64) -> Result<Vec<f64>> {
    check_n(n)?;
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    Ok(CoalescentEngine::new(m).absorption_sample(n, reps, seed))
}

fn check_n(n: u64) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need n >= 2, got {n}")));
    }
    Ok(())
}

/// Writes `replicate,tau`.
pub fn write_tau_csv(path: &Path, taus: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["replicate", "tau"])?;
    for (j, t) in taus.iter().enumerate() {
        w.write_record([j.to_string(), t.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Largest `n_max` accepted by [`exact_expected_absorption`].
pub const ORACLE_MAX_N: u64 = 10_000;
/// Rows kept between checkpoints while walking the rate tables back up.
const ORACLE_SEGMENT: u64 = 128;

/// `E[τ_b]` for `b = 0..=n_max` (entries 0 and 1 are 0), by the first-step recursion
/// `E[τ_b] = (1 + Σ_k C(b,k)λ_{b,k} E[τ_{b-k+1}]) / λ_b^tot`.
///
/// Only the top row of rates is integrated numerically; lower rows follow from
/// the consistency relation `λ_{b,k} = λ_{b+1,k} + λ_{b+1,k+1}`.
pub fn exact_expected_absorption(m: &LambdaMeasure, n_max: u64) -> Result<Vec<f64>> {
    if !(2..=ORACLE_MAX_N).contains(&n_max) {
        return Err(Error::InvalidArgument(format!(
            "n_max must lie in [2, {ORACLE_MAX_N}], got {n_max}"
        )));
    }
    let mut checkpoints = Vec::new();
    let mut row = MergerRateTable::new(m, n_max)?;
    loop {
        if (n_max - row.b).is_multiple_of(ORACLE_SEGMENT) {
            checkpoints.push(row.clone());
        }
        match row.step_down() {
            Some(next) => row = next,
            None => break,
        }
    }
    let mut expect = vec![0.0; n_max as usize + 1];
    for top in checkpoints.iter().rev() {
        let mut segment = vec![top.clone()];
        while segment.len() < ORACLE_SEGMENT as usize {
            match segment.last().unwrap().step_down() {
                Some(next) => segment.push(next),
                None => break,
            }
        }
        for r in segment.iter().rev() {
            let b = r.b as usize;
            let weighted: f64 = (2..=r.b)
                .map(|k| r.rate(k) * expect[b - k as usize + 1])
                .sum();
            expect[b] = (1.0 + weighted) / r.total;
        }
    }
    Ok(expect)
}

/// Outcome of one run of the monotone pair `(Λ, Λ^ε)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedOutcome {
    pub tau: f64,
    /// `+∞` when `Λ^ε` is the zero measure.
    pub tau_truncated: f64,
}

/// Couples the Λ-coalescent with the one driven by `Λ^ε = Λ|_{[ε,1-ε]}`.
///
/// Both chains read the same merger points; a point hitting `K'` of the `b'`
/// blocks of the truncated chain hits `K ~ Hypergeometric(b', K', b)` of the
/// `b <= b'` blocks of the full chain (its first `b` uniforms). Points outside
/// `[ε, 1-ε]` act on the full chain only. This keeps `N ≤ N^ε` pathwise.
#[derive(Debug, Clone)]
pub struct PairedCoupling {
    engine: CoalescentEngine,
    eps: f64,
    truncated_is_zero: bool,
}

impl PairedCoupling {
    pub fn new(m: &LambdaMeasure, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "eps must lie in (0, 1/2), got {eps}"
            )));
        }
        let inside = |p: f64| p >= eps && 1.0 - p >= eps;
        let mut mass: f64 = m
            .interior_atoms()
            .iter()
            .filter(|a| inside(a.location))
            .map(|a| a.mass)
            .sum();
        let range = Range {
            lo: Some(Pt::at(eps)),
            hi: Some(Pt::at(1.0 - eps)),
        };
        if let Tail::Finite(e) =
            m.integrate_density(&|pt| pt.p, &|pt| pt.q, range, &[], &QuadConfig::default())?
        {
            mass += e.value;
        }
        Ok(PairedCoupling {
            engine: CoalescentEngine::new(m),
            eps,
            truncated_is_zero: mass <= 0.0,
        })
    }

    fn inside(&self, m: &Merger) -> bool {
        matches!(m.source, Source::Atom | Source::Density)
            && m.pt.p >= self.eps
            && m.pt.q >= self.eps
    }

    pub fn run(&self, n: u64, seed: u64, replicate: u64) -> PairedOutcome {
        let mut rng = stream(seed, Domain::Paired, n, replicate);
        let (mut b, mut b_eps) = (n, n);
        let mut t = 0.0;
        let mut tau = f64::NAN;
        let mut st = self.engine.state(b_eps);
        while b_eps > 1 {
            if b == 1 && self.truncated_is_zero {
                return PairedOutcome {
                    tau,
                    tau_truncated: f64::INFINITY,
                };
            }
            if st.b != b_eps {
                st = self.engine.state(b_eps);
            }
            let (dt, merger) = self.engine.next_merger(&st, &mut rng);
            t += dt;
            if b >= 2 {
                let k = if merger.k == b_eps || b == b_eps {
                    merger.k.min(b)
                } else {
                    Hypergeometric::new(b_eps, merger.k, b)
                        .expect("valid hypergeometric")
                        .sample(&mut rng)
                };
                if k >= 2 {
                    b -= k - 1;
                    if b == 1 {
                        tau = t;
                    }
                }
            }
            if self.inside(&merger) {
                b_eps -= merger.k - 1;
            }
            debug_assert!(b <= b_eps);
        }
        PairedOutcome {
            tau,
            tau_truncated: t,
        }
    }
}
