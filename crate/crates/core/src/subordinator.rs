//! The subordinator `S` with Lévy measure `λ` = image of `Λ(dp)/p²` under
//! `y = log 1/(1-p)`, the drifted process `Y^z_t = z - S_t + ∫_0^t f(Y^z_s) ds`,
//! its passage times, the deterministic flow `ρ^z`, and the pair
//! `(log N_n, Y_n)` driven by common merger points.
//!
//! Jumps of size `>= δ` (points `p >= 1 - e^{-δ}`) are simulated exactly; the
//! smaller ones are replaced by their mean, the drift `-m_δ`.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::Serialize;

use crate::binomial::sample_hits;
use crate::coalescent::{CoalescentEngine, CoalescentPath, MergerEvent, Source};
use crate::envelope::{Envelope, Level};
use crate::error::{Error, Result};
use crate::measure::{
    dust_integral, f_eval, f_with_derivative, mu, sigma2, LambdaMeasure, Pt, Range,
};
use crate::quadrature::{QuadConfig, Tail};
use crate::rng::{stream, tag_f64, Domain};

/// Below this level `f` is frozen at `f(Y_FLOOR)`.
pub const Y_FLOOR: f64 = -5.0;
/// Spacing of the interpolation nodes of `f`.
const GRID_STEP: f64 = 1.0 / 32.0;
/// Bisection tolerance for passage times.
const PASSAGE_TOL: f64 = 1e-9;
/// A drifted path that has not passed all targets by this time is abandoned.
const MAX_TIME: f64 = 1e9;
/// `v_δ / σ²` targeted by [`default_delta`].
const VARIANCE_BUDGET: f64 = 1e-4;
/// Truncation used when `σ² = ∞`.
const FALLBACK_DELTA: f64 = 1e-6;
/// Step of the RK4 integration of `ρ^z`.
const RHO_STEP: f64 = 2.5e-4;

/// Cubic Hermite interpolant of `f` on `[Y_FLOOR, y_max]` built from exact
/// values and slopes; constant below the floor, direct quadrature above `y_max`.
#[derive(Debug, Clone)]
pub struct FCurve {
    measure: LambdaMeasure,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl FCurve {
    pub fn new(m: &LambdaMeasure, y_max: f64) -> Result<Self> {
        if !dust_integral(m)?.is_finite() {
            return Err(Error::Domain(
                "f is only finite for measures with dust".into(),
            ));
        }
        let nodes = ((y_max.max(Y_FLOOR + 1.0) - Y_FLOOR) / GRID_STEP).ceil() as usize + 1;
        let pairs = (0..nodes)
            .into_par_iter()
            .map(|i| f_with_derivative(m, Y_FLOOR + i as f64 * GRID_STEP))
            .collect::<Result<Vec<_>>>()?;
        let (values, slopes) = pairs.into_iter().unzip();
        Ok(FCurve {
            measure: m.clone(),
            values,
            slopes,
        })
    }

    pub fn y_max(&self) -> f64 {
        Y_FLOOR + (self.values.len() - 1) as f64 * GRID_STEP
    }

    pub fn eval(&self, y: f64) -> f64 {
        if y <= Y_FLOOR {
            return self.values[0];
        }
        let x = (y - Y_FLOOR) / GRID_STEP;
        let i = x.floor() as usize;
        if i + 1 >= self.values.len() {
            let last = *self.values.last().expect("non-empty grid");
            return if y == self.y_max() {
                last
            } else {
                f_eval(&self.measure, y).unwrap_or(last)
            };
        }
        let t = x - i as f64;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.values[i]
            + h10 * GRID_STEP * self.slopes[i]
            + h01 * self.values[i + 1]
            + h11 * GRID_STEP * self.slopes[i + 1]
    }
}

/// The jump measure `λ` split at `δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpMeasure {
    pub delta: f64,
    /// `1 - e^{-δ}`, the smallest retained merger location.
    pub p_delta: f64,
    /// `λ([δ, ∞])`.
    pub truncated_rate: f64,
    /// `∫_{[δ,∞)} y λ(dy)`; infinite with an atom at `p = 1`.
    pub truncated_mean: f64,
    /// `m_δ = ∫_{(0,δ)} y λ(dy)`.
    pub m_delta: f64,
    /// `v_δ = ∫_{(0,δ)} y² λ(dy)`.
    pub v_delta: f64,
}

impl JumpMeasure {
    pub fn new(m: &LambdaMeasure, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "delta must be positive, got {delta}"
            )));
        }
        if m.atom_at_zero() > 0.0 {
            return Err(Error::Domain("the jump measure needs Λ({0}) = 0".into()));
        }
        let cut = Pt::from_v(delta);
        let above = Range {
            lo: Some(cut),
            hi: None,
        };
        let below = Range {
            lo: None,
            hi: Some(cut),
        };
        let atoms_above = || {
            m.interior_atoms()
                .iter()
                .map(|a| Pt::at(a.location))
                .zip(m.interior_atoms())
                .filter(|(pt, _)| pt.v >= delta)
        };
        let atoms_below = || {
            m.interior_atoms()
                .iter()
                .map(|a| Pt::at(a.location))
                .zip(m.interior_atoms())
                .filter(|(pt, _)| pt.v < delta)
        };

        let rate = atoms_above()
            .map(|(pt, a)| a.mass / (pt.p * pt.p))
            .sum::<f64>()
            + m.atom_at_one()
            + density_part(
                m,
                |pt| 1.0 / pt.p,
                |pt| pt.q / (pt.p * pt.p),
                above,
                "truncated rate",
            )?;
        let mean = if m.atom_at_one() > 0.0 {
            f64::INFINITY
        } else {
            let dens = m.integrate_density(
                &|pt| pt.phi1(),
                &|pt| pt.v * pt.q / (pt.p * pt.p),
                above,
                &[],
                &QuadConfig::default(),
            )?;
            atoms_above()
                .map(|(pt, a)| a.mass * pt.v / (pt.p * pt.p))
                .sum::<f64>()
                + match dens {
                    Tail::Finite(e) => e.value,
                    Tail::Divergent => f64::INFINITY,
                }
        };
        let m_delta = atoms_below()
            .map(|(pt, a)| a.mass * pt.v / (pt.p * pt.p))
            .sum::<f64>()
            + density_part(
                m,
                |pt| pt.phi1(),
                |pt| pt.v * pt.q / (pt.p * pt.p),
                below,
                "small-jump mean",
            )?;
        let v_delta = atoms_below()
            .map(|(pt, a)| a.mass * pt.v * pt.v / (pt.p * pt.p))
            .sum::<f64>()
            + density_part(
                m,
                |pt| pt.v * pt.phi1(),
                |pt| pt.v * pt.v * pt.q / (pt.p * pt.p),
                below,
                "small-jump variance",
            )?;
        Ok(JumpMeasure {
            delta,
            p_delta: cut.p,
            truncated_rate: rate,
            truncated_mean: mean,
            m_delta,
            v_delta,
        })
    }
}

fn density_part(
    m: &LambdaMeasure,
    left: impl Fn(&Pt) -> f64,
    right: impl Fn(&Pt) -> f64,
    range: Range,
    what: &str,
) -> Result<f64> {
    match m.integrate_density(&left, &right, range, &[], &QuadConfig::default())? {
        Tail::Finite(e) => Ok(e.value),
        Tail::Divergent => Err(Error::Domain(format!("{what} diverges"))),
    }
}

/// Largest `δ = 2^{-j}` with `v_δ <= 10⁻⁴ σ²`; `10⁻⁶` when `σ² = ∞`.
pub fn default_delta(m: &LambdaMeasure) -> Result<f64> {
    let s2 = sigma2(m)?;
    if !s2.is_finite() {
        return Ok(FALLBACK_DELTA);
    }
    let mut delta = 1.0;
    for _ in 0..40 {
        if JumpMeasure::new(m, delta)?.v_delta <= VARIANCE_BUDGET * s2.value {
            return Ok(delta);
        }
        delta *= 0.5;
    }
    Ok(delta)
}

/// Poisson stream of merger points with `p >= p_δ` at intensity `Λ(dp)/p²`.
#[derive(Debug, Clone)]
struct BigPoints {
    measure: LambdaMeasure,
    star: f64,
    atoms: Vec<Pt>,
    atom_cum: Vec<f64>,
    envelope: Option<(Envelope, Level)>,
    total: f64,
}

impl BigPoints {
    fn new(m: &LambdaMeasure, delta: f64) -> Self {
        let cut = Pt::from_v(delta);
        let mut acc = 0.0;
        let (atoms, atom_cum) = m
            .interior_atoms()
            .iter()
            .map(|a| (Pt::at(a.location), a.mass))
            .filter(|(pt, _)| pt.v >= delta)
            .map(|(pt, w)| {
                acc += w / (pt.p * pt.p);
                (pt, acc)
            })
            .unzip();
        let envelope = Envelope::new(m, Some(cut), None).map(|e| {
            let level = e.level(f64::INFINITY);
            (e, level)
        });
        let total = m.atom_at_one() + acc + envelope.as_ref().map_or(0.0, |(_, l)| l.total);
        BigPoints {
            measure: m.clone(),
            star: m.atom_at_one(),
            atoms,
            atom_cum,
            envelope,
            total,
        }
    }

    /// Waiting time to and location of the next point; `None` if the stream is empty.
    fn next<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<(f64, Pt)> {
        if self.total <= 0.0 {
            return None;
        }
        let mut elapsed = 0.0;
        loop {
            let e: f64 = Exp1.sample(rng);
            elapsed += e / self.total;
            let mut x = rng.random::<f64>() * self.total;
            if x < self.star {
                return Some((elapsed, Pt::from_q(0.0)));
            }
            x -= self.star;
            let atom_total = self.atom_cum.last().copied().unwrap_or(0.0);
            if x < atom_total {
                let i = self
                    .atom_cum
                    .partition_point(|&c| c <= x)
                    .min(self.atoms.len() - 1);
                return Some((elapsed, self.atoms[i]));
            }
            let Some((env, level)) = &self.envelope else {
                continue;
            };
            let prop = env.propose(level, rng);
            let target = self.measure.density_at(&prop.pt) / (prop.pt.p * prop.pt.p);
            if rng.random::<f64>() * prop.envelope < target {
                return Some((elapsed, prop.pt));
            }
        }
    }
}

/// One passage record `T^z_x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Passage {
    pub x: f64,
    pub t: f64,
}

/// A simulated path of `Y^z`, up to the last requested passage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftedPath {
    pub z: f64,
    pub delta: f64,
    pub m_delta: f64,
    /// `(time, size)` of every retained jump.
    pub jumps: Vec<(f64, f64)>,
    /// In the order of the requested targets.
    pub passages: Vec<Passage>,
    pub t_end: f64,
    pub y_end: f64,
    /// `∫_0^{t_end} f(Y_s) ds`.
    pub drift_integral: f64,
}

impl DriftedPath {
    pub fn passage_time(&self, x: f64) -> Option<f64> {
        self.passages.iter().find(|p| p.x == x).map(|p| p.t)
    }

    /// `z - Σ jumps - m_δ t + ∫ f(Y) ds` at `t_end`.
    pub fn reconstruct_end(&self) -> f64 {
        self.z - self.jumps.iter().map(|j| j.1).sum::<f64>() - self.m_delta * self.t_end
            + self.drift_integral
    }
}

/// Simulator of `Y^z` for one measure and truncation level.
#[derive(Debug, Clone)]
pub struct DriftedEngine {
    jumps: JumpMeasure,
    big: BigPoints,
    f: FCurve,
    step: f64,
}

/// Running state of the inter-jump ODE.
#[derive(Debug, Clone, Copy)]
struct Flow {
    t: f64,
    y: f64,
    drift_integral: f64,
}

impl DriftedEngine {
    /// `y_max` bounds the levels at which `f` is tabulated (use the largest start value plus a margin).
    pub fn new(m: &LambdaMeasure, delta: f64, y_max: f64) -> Result<Self> {
        let jumps = JumpMeasure::new(m, delta)?;
        let f = FCurve::new(m, y_max)?;
        let step = 0.01f64.min(0.1 / f.eval(Y_FLOOR));
        Ok(DriftedEngine {
            jumps,
            big: BigPoints::new(m, delta),
            f,
            step,
        })
    }

    pub fn jump_measure(&self) -> &JumpMeasure {
        &self.jumps
    }

    pub fn f_curve(&self) -> &FCurve {
        &self.f
    }

    fn drift(&self, y: f64) -> f64 {
        self.f.eval(y) - self.jumps.m_delta
    }

    /// One RK4 step of size `h`: new value and `∫ f(Y) ds` over the step.
    fn rk4(&self, y: f64, h: f64) -> (f64, f64) {
        let f1 = self.f.eval(y);
        let f2 = self.f.eval(y + 0.5 * h * (f1 - self.jumps.m_delta));
        let f3 = self.f.eval(y + 0.5 * h * (f2 - self.jumps.m_delta));
        let f4 = self.f.eval(y + h * (f3 - self.jumps.m_delta));
        let fint = h * (f1 + 2.0 * f2 + 2.0 * f3 + f4) / 6.0;
        (y + fint - self.jumps.m_delta * h, fint)
    }

    /// Advances the flow by `duration` (possibly infinite) or until it falls below
    /// `stop_below`; returns whether it crossed, in which case `flow` sits at the crossing.
    fn advance(&self, flow: &mut Flow, duration: f64, stop_below: f64) -> Result<bool> {
        let end = flow.t + duration;
        while flow.t < end {
            let h = self.step.min(end - flow.t);
            let (y1, fint) = self.rk4(flow.y, h);
            if y1 < stop_below {
                let (mut lo, mut hi) = (0.0, h);
                while hi - lo > PASSAGE_TOL {
                    let mid = 0.5 * (lo + hi);
                    if self.rk4(flow.y, mid).0 < stop_below {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let (y_hit, f_hit) = self.rk4(flow.y, hi);
                flow.t += hi;
                flow.y = y_hit;
                flow.drift_integral += f_hit;
                return Ok(true);
            }
            flow.t += h;
            flow.y = y1;
            flow.drift_integral += fint;
            if flow.t > MAX_TIME {
                return Err(Error::Ode(format!(
                    "no passage below {stop_below} before t = {MAX_TIME:e}"
                )));
            }
            if duration.is_infinite() && self.drift(flow.y) >= 0.0 {
                return Err(Error::Ode(format!(
                    "flow is stationary at y = {} with no jumps left",
                    flow.y
                )));
            }
        }
        Ok(false)
    }

    /// Simulates `Y^z` until it has passed below every level in `x_targets`.
    pub fn simulate(
        &self,
        z: f64,
        x_targets: &[f64],
        seed: u64,
        replicate: u64,
    ) -> Result<DriftedPath> {
        if let Some(bad) = x_targets
            .iter()
            .find(|x| !(x.is_finite() && **x >= Y_FLOOR + 1.0))
        {
            return Err(Error::InvalidArgument(format!(
                "passage level {bad} must be finite and >= {}",
                Y_FLOOR + 1.0
            )));
        }
        let mut order: Vec<usize> = (0..x_targets.len()).collect();
        order.sort_by(|&a, &b| x_targets[b].total_cmp(&x_targets[a]));
        let mut times = vec![f64::NAN; x_targets.len()];
        let mut pending = order.into_iter().peekable();

        let mut rng = stream(seed, Domain::Drifted, tag_f64(z), replicate);
        let mut flow = Flow {
            t: 0.0,
            y: z,
            drift_integral: 0.0,
        };
        let mut jumps = Vec::new();
        let record = |pending: &mut std::iter::Peekable<std::vec::IntoIter<usize>>,
                      times: &mut Vec<f64>,
                      flow: &Flow| {
            while let Some(&i) = pending.peek() {
                if x_targets[i] > flow.y {
                    times[i] = flow.t;
                    pending.next();
                } else {
                    break;
                }
            }
        };
        record(&mut pending, &mut times, &flow);
        while let Some(&next) = pending.peek() {
            let point = self.big.next(&mut rng);
            let wait = point.map_or(f64::INFINITY, |(dt, _)| dt);
            if self.advance(&mut flow, wait, x_targets[next])? {
                times[next] = flow.t;
                pending.next();
                record(&mut pending, &mut times, &flow);
                // The drawn point lies beyond the crossing; by memorylessness a fresh one is drawn.
                continue;
            }
            let (_, pt) = point.expect("finite wait implies a point");
            jumps.push((flow.t, pt.v));
            flow.y -= pt.v;
            record(&mut pending, &mut times, &flow);
        }
        let passages = x_targets
            .iter()
            .zip(&times)
            .map(|(&x, &t)| Passage { x, t })
            .collect();
        Ok(DriftedPath {
            z,
            delta: self.jumps.delta,
            m_delta: self.jumps.m_delta,
            jumps,
            passages,
            t_end: flow.t,
            y_end: flow.y,
            drift_integral: flow.drift_integral,
        })
    }

    /// `T^z_x` for replicates `0..reps`, in replicate order.
    pub fn passage_sample(&self, z: f64, x: f64, reps: usize, seed: u64) -> Result<Vec<f64>> {
        (0..reps as u64)
            .into_par_iter()
            .map(|j| Ok(self.simulate(z, &[x], seed, j)?.passages[0].t))
            .collect()
    }

    /// `(S_t, M_t)` with `M_t = sup_{u<=t} |S_u - μu|`, where `S` is the truncated
    /// subordinator plus its compensator `m_δ u`.
    pub fn sup_deviation(&self, t_horizon: f64, seed: u64, replicate: u64) -> Result<(f64, f64)> {
        let mu = mu(&self.f.measure)?;
        if !mu.is_finite() {
            return Err(Error::Domain("M_t needs μ < ∞".into()));
        }
        let mut rng = stream(seed, Domain::Deviation, tag_f64(t_horizon), replicate);
        let slope = self.jumps.m_delta - mu.value;
        let (mut t, mut jumps_sum, mut sup) = (0.0, 0.0, 0.0f64);
        while let Some((dt, pt)) = self.big.next(&mut rng) {
            if t + dt > t_horizon {
                break;
            }
            t += dt;
            let before = jumps_sum + slope * t;
            jumps_sum += pt.v;
            sup = sup.max(before.abs()).max((before + pt.v).abs());
        }
        let end = jumps_sum + slope * t_horizon;
        Ok((
            jumps_sum + self.jumps.m_delta * t_horizon,
            sup.max(end.abs()),
        ))
    }
}

pub fn simulate_drifted(
    m: &LambdaMeasure,
    z: f64,
    delta: f64,
    x_targets: &[f64],
    seed: u64,
) -> Result<DriftedPath> {
    let y_max = z.max(x_targets.iter().copied().fold(f64::NEG_INFINITY, f64::max)) + 2.0;
    DriftedEngine::new(m, delta, y_max)?.simulate(z, x_targets, seed, 0)
}

/// Writes `replicate,z,x,T`.
pub fn write_passage_csv(path: &std::path::Path, z: f64, x: f64, times: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["replicate", "z", "x", "T"])?;
    for (j, t) in times.iter().enumerate() {
        w.write_record([j.to_string(), z.to_string(), x.to_string(), t.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Summary of one run of the coupled pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoupledOutcome {
    pub tau: f64,
    /// `sup_{t<τ_n} |log N_n(t) - Y_n(t)|`.
    pub sup_gap: f64,
    /// `Y_n(τ_n)`.
    pub y_at_tau: f64,
}

/// Full record of one coupled run.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledRun {
    pub coalescent: CoalescentPath,
    pub drifted: DriftedPath,
    pub outcome: CoupledOutcome,
}

/// Couples `N_n` with `Y_n` (started at `log n`) through common merger points.
///
/// Points with `p >= p_δ` act on both: the coalescent merges the `K ~ Bin(b,p)`
/// hit blocks when `K >= 2`, and `Y` jumps down by `log 1/(1-p)`. Points below
/// `p_δ` act on the coalescent only (through its exact thinned stream) and on
/// `Y` only through the compensating drift `-m_δ`.
#[derive(Debug, Clone)]
pub struct CoupledEngine {
    drifted: DriftedEngine,
    small: CoalescentEngine,
    fingerprint: String,
}

impl CoupledEngine {
    /// Engine for starting sizes up to `n_max`.
    pub fn new(m: &LambdaMeasure, delta: f64, n_max: u64) -> Result<Self> {
        let drifted = DriftedEngine::new(m, delta, (n_max as f64).ln() + 2.0)?;
        let small = CoalescentEngine::below(m, Pt::from_v(delta));
        Ok(CoupledEngine {
            drifted,
            small,
            fingerprint: m.fingerprint(),
        })
    }

    pub fn jump_measure(&self) -> &JumpMeasure {
        &self.drifted.jumps
    }

    fn run_inner(
        &self,
        n: u64,
        seed: u64,
        replicate: u64,
        mut on_event: impl FnMut(MergerEvent),
        mut on_jump: impl FnMut(f64, f64),
    ) -> Result<(CoupledOutcome, Flow)> {
        let mut rng = stream(seed, Domain::Coupled, n, replicate);
        let mut b = n;
        let mut flow = Flow {
            t: 0.0,
            y: (n as f64).ln(),
            drift_integral: 0.0,
        };
        let mut gap = 0.0f64;
        let mut st = self.small.state(b);
        while b > 1 {
            if st.b != b {
                st = self.small.state(b);
            }
            let big = self.drifted.big.next(&mut rng);
            let small = (st.total > 0.0).then(|| self.small.next_merger(&st, &mut rng));
            let t_big = big.map_or(f64::INFINITY, |x| x.0);
            let t_small = small.map_or(f64::INFINITY, |x| x.0);
            let wait = t_big.min(t_small);
            if !wait.is_finite() {
                return Err(Error::Domain(
                    "no merger points left while blocks remain".into(),
                ));
            }
            self.drifted.advance(&mut flow, wait, f64::NEG_INFINITY)?;
            let log_b = (b as f64).ln();
            gap = gap.max((log_b - flow.y).abs());
            let (k, pt, source) = if t_big <= t_small {
                let (_, pt) = big.expect("finite");
                on_jump(flow.t, pt.v);
                flow.y -= pt.v;
                let source = if pt.q == 0.0 {
                    Source::Star
                } else if self.is_atom(pt.p) {
                    Source::Atom
                } else {
                    Source::Density
                };
                (sample_hits(b, &pt, &mut rng), pt, source)
            } else {
                let (_, merger) = small.expect("finite");
                (merger.k, merger.pt, merger.source)
            };
            if k >= 2 {
                on_event(MergerEvent {
                    t: flow.t,
                    b_before: b,
                    k,
                    p: pt.p,
                    source,
                });
                b -= k - 1;
            }
            if b > 1 {
                gap = gap.max(((b as f64).ln() - flow.y).abs());
            }
        }
        Ok((
            CoupledOutcome {
                tau: flow.t,
                sup_gap: gap,
                y_at_tau: flow.y,
            },
            flow,
        ))
    }

    fn is_atom(&self, p: f64) -> bool {
        self.drifted.big.atoms.iter().any(|a| a.p == p)
    }

    pub fn run(&self, n: u64, seed: u64, replicate: u64) -> Result<CoupledOutcome> {
        Ok(self.run_inner(n, seed, replicate, |_| {}, |_, _| {})?.0)
    }

    pub fn run_recorded(&self, n: u64, seed: u64, replicate: u64) -> Result<CoupledRun> {
        let mut events = Vec::new();
        let mut jumps = Vec::new();
        let (outcome, flow) = self.run_inner(
            n,
            seed,
            replicate,
            |e| events.push(e),
            |t, y| jumps.push((t, y)),
        )?;
        let coalescent = CoalescentPath {
            n,
            events,
            tau: outcome.tau,
            rng_seed: seed,
            measure_fingerprint: self.fingerprint.clone(),
        };
        let drifted = DriftedPath {
            z: (n as f64).ln(),
            delta: self.drifted.jumps.delta,
            m_delta: self.drifted.jumps.m_delta,
            jumps,
            passages: Vec::new(),
            t_end: flow.t,
            y_end: flow.y,
            drift_integral: flow.drift_integral,
        };
        Ok(CoupledRun {
            coalescent,
            drifted,
            outcome,
        })
    }

    /// Outcomes of replicates `0..reps`, in replicate order.
    pub fn sample(&self, n: u64, reps: usize, seed: u64) -> Result<Vec<CoupledOutcome>> {
        (0..reps as u64)
            .into_par_iter()
            .map(|j| self.run(n, seed, j))
            .collect()
    }
}

pub fn coupled_simulate(m: &LambdaMeasure, n: u64, delta: f64, seed: u64) -> Result<CoupledRun> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need n >= 2, got {n}")));
    }
    CoupledEngine::new(m, delta, n)?.run_recorded(n, seed, 0)
}

/// `M_t` for one replicate at truncation `δ`.
pub fn sup_deviation(m: &LambdaMeasure, delta: f64, t_horizon: f64, seed: u64) -> Result<f64> {
    Ok(DriftedEngine::new(m, delta, Y_FLOOR + 1.0)?
        .sup_deviation(t_horizon, seed, 0)?
        .1)
}

/// The flow `ρ^z` with `ρ̇ = f̃(ρ) - μ`, `f̃ = min(f, μ/2)`, sampled at `t_grid`.
pub fn rho_flow(m: &LambdaMeasure, z: f64, t_grid: &[f64]) -> Result<Vec<f64>> {
    let mu = mu(m)?;
    if !mu.is_finite() {
        return Err(Error::Domain("ρ^z needs μ < ∞".into()));
    }
    let half = 0.5 * mu.value;
    let curve = FCurve::new(m, z + 1.0)?;
    let slope = |y: f64| curve.eval(y).min(half) - mu.value;
    let mut out = Vec::with_capacity(t_grid.len());
    let (mut t, mut y) = (0.0, z);
    for &target in t_grid {
        if !(target >= t) {
            return Err(Error::InvalidArgument(
                "t_grid must be non-negative and increasing".into(),
            ));
        }
        while t < target {
            let h = RHO_STEP.min(target - t);
            let k1 = slope(y);
            let k2 = slope(y + 0.5 * h * k1);
            let k3 = slope(y + 0.5 * h * k2);
            let k4 = slope(y + h * k3);
            y += h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
            t += h;
        }
        out.push(y);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::beta_clamped;
    use crate::measure::{f_eval, parse_measure, sigma2};
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn half() -> LambdaMeasure {
        parse_measure("atom:0.5:1").unwrap()
    }

    #[test]
    fn half_atom_jump_measure() {
        let j = JumpMeasure::new(&half(), 0.5).unwrap();
        assert!((j.truncated_rate - 4.0).abs() < 1e-12);
        assert_eq!(j.m_delta, 0.0);
        assert!((j.truncated_mean - 4.0 * LN_2).abs() < 1e-12);
    }

    #[test]
    fn truncation_splits_the_mean() {
        let m = parse_measure("density:log_gamma:2").unwrap();
        let mu = mu(&m).unwrap().value;
        let (mut last_m, mut last_v) = (f64::INFINITY, f64::INFINITY);
        for delta in [1e-2, 1e-4, 1e-6] {
            let j = JumpMeasure::new(&m, delta).unwrap();
            assert!(
                ((j.truncated_mean + j.m_delta) / mu - 1.0).abs() < 1e-8,
                "δ={delta}"
            );
            assert!(j.m_delta < last_m && j.v_delta < last_v);
            (last_m, last_v) = (j.m_delta, j.v_delta);
        }
    }

    #[test]
    fn default_delta_meets_variance_budget() {
        let m = parse_measure("density:log_gamma:2").unwrap();
        let d = default_delta(&m).unwrap();
        let s2 = sigma2(&m).unwrap().value;
        assert!(JumpMeasure::new(&m, d).unwrap().v_delta <= VARIANCE_BUDGET * s2);
        assert!(JumpMeasure::new(&m, 2.0 * d).unwrap().v_delta > VARIANCE_BUDGET * s2);
    }

    #[test]
    fn interpolant_matches_quadrature() {
        let m = parse_measure("density:beta:2:3:1").unwrap();
        let curve = FCurve::new(&m, 12.0).unwrap();
        for i in 0..100 {
            let y = Y_FLOOR + (12.0 - Y_FLOOR) * (i as f64 + 0.37) / 100.0;
            let want = f_eval(&m, y).unwrap();
            assert!((curve.eval(y) - want).abs() <= 1e-8 * want + 1e-14, "y={y}");
        }
    }

    #[test]
    fn half_atom_jumps_are_ln2() {
        let engine = DriftedEngine::new(&half(), 0.5, 12.0).unwrap();
        let path = engine.simulate(10.0, &[0.0], 3, 0).unwrap();
        assert!(!path.jumps.is_empty());
        assert!(path.jumps.iter().all(|j| (j.1 - LN_2).abs() < 1e-12));
        let (s, _) = engine.sup_deviation(2000.0, 5, 0).unwrap();
        let rate = s / LN_2 / 2000.0;
        assert!(
            (rate - 4.0).abs() < 4.0 * (4.0f64 / 2000.0).sqrt(),
            "{rate}"
        );
    }

    #[test]
    fn target_above_start_is_immediate() {
        let path = simulate_drifted(&half(), 5.0, 0.5, &[6.0, 2.0], 1).unwrap();
        assert_eq!(path.passage_time(6.0), Some(0.0));
        assert!(path.passage_time(2.0).unwrap() > 0.0);
        assert!(simulate_drifted(&half(), 5.0, 0.5, &[Y_FLOOR], 1).is_err());
    }

    #[test]
    fn path_reconstructs_its_end() {
        let m = parse_measure("density:log_gamma:2").unwrap();
        let d = default_delta(&m).unwrap();
        for seed in 0..5 {
            let p = simulate_drifted(&m, 8.0, d, &[1.0], seed).unwrap();
            assert!((p.reconstruct_end() - p.y_end).abs() < 1e-6, "seed {seed}");
            assert!((p.y_end - 1.0).abs() < 1e-6 || p.y_end < 1.0);
        }
    }

    #[test]
    fn rho_starts_at_z_and_hits_zero_at_clamped_beta() {
        let m = parse_measure("density:log_gamma:2").unwrap();
        let mu = mu(&m).unwrap().value;
        let z = 6.0;
        let b = beta_clamped(&m, z).unwrap();
        let grid = [0.0, 0.25 * b, 0.5 * b, b];
        let r = rho_flow(&m, z, &grid).unwrap();
        assert_eq!(r[0], z);
        for w in r.windows(2).zip(grid.windows(2)) {
            assert!(w.0[1] - w.0[0] <= -0.5 * mu * (w.1[1] - w.1[0]) + 1e-12);
        }
        assert!(r[3].abs() < 1e-7, "{}", r[3]);
    }

    #[test]
    fn deviation_is_zero_at_time_zero_and_mean_rate_is_mu() {
        let m = parse_measure("density:log_gamma:2").unwrap();
        let d = default_delta(&m).unwrap();
        assert_eq!(sup_deviation(&m, d, 0.0, 1).unwrap(), 0.0);
        let engine = DriftedEngine::new(&m, d, Y_FLOOR + 1.0).unwrap();
        let mu = mu(&m).unwrap().value;
        let t = 50.0;
        let s: Vec<f64> = (0..400)
            .map(|j| engine.sup_deviation(t, 2, j).unwrap().0 / t)
            .collect();
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        let sd = sigma2(&m).unwrap().value.sqrt() / (t * s.len() as f64).sqrt();
        assert!((mean - mu).abs() < 4.0 * sd, "{mean} vs {mu}");
    }

    #[test]
    fn coupled_run_is_consistent() {
        for spec in ["atom:0.5:1", "density:log_gamma:2"] {
            let m = parse_measure(spec).unwrap();
            let d = default_delta(&m).unwrap();
            for seed in 0..3 {
                let run = coupled_simulate(&m, 500, d, seed).unwrap();
                run.coalescent.validate().unwrap();
                assert!(run.outcome.sup_gap.is_finite() && run.outcome.sup_gap >= 0.0);
                assert_eq!(run.outcome.tau, run.coalescent.tau);
            }
        }
    }

    #[test]
    fn samples_are_deterministic_across_thread_counts() {
        let m = parse_measure("density:log_gamma:2").unwrap();
        let engine = DriftedEngine::new(&m, default_delta(&m).unwrap(), 8.0).unwrap();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = one
            .install(|| engine.passage_sample(6.0, 1.0, 32, 9))
            .unwrap();
        let b = four
            .install(|| engine.passage_sample(6.0, 1.0, 32, 9))
            .unwrap();
        assert_eq!(a, b);
        let c = CoupledEngine::new(&m, 1e-3, 300).unwrap();
        let x = one.install(|| c.sample(300, 16, 4)).unwrap();
        let y = four.install(|| c.sample(300, 16, 4)).unwrap();
        assert_eq!(x, y);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn passage_times_are_monotone(seed in 0u64..1000, z in 3.0f64..10.0, a in -3.0f64..3.0, gap in 0.01f64..2.0) {
            let m = parse_measure("density:log_gamma:2").unwrap();
            let p = simulate_drifted(&m, z, 1e-2, &[a + gap, a], seed).unwrap();
            prop_assert!(p.passage_time(a + gap).unwrap() <= p.passage_time(a).unwrap());
        }
    }
}
