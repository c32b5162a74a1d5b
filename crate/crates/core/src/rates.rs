//! Transition rates of the block-counting chain.

use rayon::prelude::*;
use serde::Serialize;

use crate::binomial::{block_loss_rate, hit2_rate, ln_choose, pairs};
use crate::error::{Error, Result};
use crate::measure::{LambdaMeasure, Pt, Range, Side, LN2};
use crate::quadrature::{QuadConfig, Tail};

fn finite(tail: Tail, what: &str) -> Result<f64> {
    match tail {
        Tail::Finite(e) => Ok(e.value),
        Tail::Divergent => Err(Error::Domain(format!("{what} diverged; Λ must be finite"))),
    }
}

/// Breakpoint placing a panel edge at `p*`.
fn peak_break(p_star: f64) -> Option<(Side, f64)> {
    if p_star <= 0.0 || p_star >= 1.0 {
        None
    } else if p_star <= 0.5 {
        let u = -p_star.ln();
        (u > LN2).then_some((Side::Left, u))
    } else {
        let v = -(-p_star).ln_1p();
        (v > LN2).then_some((Side::Right, v))
    }
}

/// Panel edges around the peaks of `p^{k-1} q^{b-k}` (in `u`) and `p^{k-2} q^{b-k+1}` (in `v`),
/// spaced in multiples of the peak width so that no panel hides a narrow bump.
fn peak_breaks(bf: f64, kf: f64) -> Vec<(Side, f64)> {
    const OFFSETS: [f64; 13] = [
        -16.0, -8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0,
    ];
    let denom = (bf - 1.0).max(1.0);
    let side_of = |pt: Pt| {
        if pt.p <= 0.5 {
            (Side::Left, pt.u)
        } else {
            (Side::Right, pt.v)
        }
    };
    let mut out = Vec::new();
    let left = Pt::at((kf - 1.0) / denom);
    if bf > kf {
        let width = left.q / ((bf - kf) * left.p).sqrt();
        out.extend(
            OFFSETS
                .iter()
                .map(|j| left.u + j * width)
                .filter(|&u| u > 0.0 && u.is_finite())
                .map(|u| side_of(Pt::from_u(u))),
        );
    }
    let right = Pt::at((kf - 2.0) / denom);
    if kf > 2.0 {
        let width = right.p / ((kf - 2.0) * right.q).sqrt();
        out.extend(
            OFFSETS
                .iter()
                .map(|j| right.v + j * width)
                .filter(|&v| v > 0.0 && v.is_finite())
                .map(|v| side_of(Pt::from_v(v))),
        );
    }
    out
}

fn check_bk(b: u64, k: u64) -> Result<()> {
    if b < 2 || k < 2 || k > b {
        return Err(Error::InvalidArgument(format!(
            "need 2 <= k <= b, got b={b}, k={k}"
        )));
    }
    Ok(())
}

/// `C(b,k)·p^{k-2}(1-p)^{b-k}` integrated against Λ, with `log_scale` added to the exponent.
fn power_integral(m: &LambdaMeasure, b: u64, k: u64, log_scale: f64) -> Result<f64> {
    let (bf, kf) = (b as f64, k as f64);
    let mut total = 0.0;
    if k == 2 {
        total += m.atom_at_zero() * log_scale.exp();
    }
    if k == b {
        total += m.atom_at_one() * log_scale.exp();
    }
    for a in m.interior_atoms() {
        let pt = Pt::at(a.location);
        total += a.mass * (log_scale - (kf - 2.0) * pt.u - (bf - kf) * pt.v).exp();
    }
    if m.has_density() {
        let left = |pt: &Pt| (log_scale - (kf - 1.0) * pt.u - (bf - kf) * pt.v).exp();
        let right = |pt: &Pt| (log_scale - (kf - 2.0) * pt.u - (bf - kf + 1.0) * pt.v).exp();
        let breaks = peak_breaks(bf, kf);
        let tail = m.integrate_density(
            &left,
            &right,
            Range::default(),
            &breaks,
            &QuadConfig::default(),
        )?;
        total += finite(tail, "merger rate")?;
    }
    Ok(total)
}

/// `λ_{b,k} = ∫ p^{k-2} (1-p)^{b-k} Λ(dp)`: rate at which one given `k`-subset of `b` blocks merges.
pub fn lambda_bk(m: &LambdaMeasure, b: u64, k: u64) -> Result<f64> {
    check_bk(b, k)?;
    // Integrate the binomially weighted rate, whose size is moderate, then unscale.
    let ln_c = ln_choose(b, k);
    Ok(power_integral(m, b, k, ln_c)? * (-ln_c).exp())
}

/// `C(b,k)·λ_{b,k}`: rate of the transition `b → b-k+1`.
pub fn weighted_rate(m: &LambdaMeasure, b: u64, k: u64) -> Result<f64> {
    check_bk(b, k)?;
    power_integral(m, b, k, ln_choose(b, k))
}

/// Integral of a `p`-merger kernel `g(p)/p²` (given with its `p→0` limit) against Λ.
fn kernel_integral(
    m: &LambdaMeasure,
    b: u64,
    kernel: fn(u64, &Pt) -> f64,
    at_one: f64,
    cfg: &QuadConfig,
) -> Result<f64> {
    let mut total = m.atom_at_zero() * pairs(b) + m.atom_at_one() * at_one;
    for a in m.interior_atoms() {
        total += a.mass * kernel(b, &Pt::at(a.location));
    }
    if m.has_density() {
        let left = |pt: &Pt| kernel(b, pt) * pt.p;
        let right = |pt: &Pt| kernel(b, pt) * pt.q;
        let breaks: Vec<_> = peak_break(1.0 / b as f64).into_iter().collect();
        total += finite(
            m.integrate_density(&left, &right, Range::default(), &breaks, cfg)?,
            "total rate",
        )?;
    }
    Ok(total)
}

/// `λ_b^tot = ∫ h_b(p) Λ(dp)/p²` with `h_b(p) = 1 - (1-p)^b - b p (1-p)^{b-1}`.
pub fn total_merger_rate(m: &LambdaMeasure, b: u64) -> Result<f64> {
    if b < 2 {
        return Err(Error::InvalidArgument(format!("need b >= 2, got {b}")));
    }
    kernel_integral(m, b, hit2_rate, 1.0, &QuadConfig::default())
}

/// `γ_b = Σ_k (k-1) C(b,k) λ_{b,k} = ∫ (b p - 1 + (1-p)^b) Λ(dp)/p²`.
pub fn gamma_b(m: &LambdaMeasure, b: u64) -> Result<f64> {
    if b < 2 {
        return Err(Error::InvalidArgument(format!("need b >= 2, got {b}")));
    }
    kernel_integral(
        m,
        b,
        block_loss_rate,
        (b - 1) as f64,
        &QuadConfig::default(),
    )
}

/// Rates out of state `b`: entry `k-2` holds `C(b,k) λ_{b,k}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergerRateTable {
    pub b: u64,
    pub rates: Vec<f64>,
    pub total: f64,
}

impl MergerRateTable {
    pub fn new(m: &LambdaMeasure, b: u64) -> Result<Self> {
        if b < 2 {
            return Err(Error::InvalidArgument(format!("need b >= 2, got {b}")));
        }
        let rates = (2..=b)
            .into_par_iter()
            .map(|k| weighted_rate(m, b, k))
            .collect::<Result<Vec<_>>>()?;
        let total = rates.iter().sum();
        Ok(MergerRateTable { b, rates, total })
    }

    pub fn rate(&self, k: u64) -> f64 {
        self.rates[(k - 2) as usize]
    }

    /// Rates out of state `b-1`, from `λ_{b-1,k} = λ_{b,k} + λ_{b,k+1}` rewritten for weighted entries.
    pub fn step_down(&self) -> Option<Self> {
        let b = self.b;
        if b <= 2 {
            return None;
        }
        let bf = b as f64;
        let rates: Vec<f64> = (2..b)
            .map(|k| {
                let kf = k as f64;
                self.rate(k) * (bf - kf) / bf + self.rate(k + 1) * (kf + 1.0) / bf
            })
            .collect();
        let total = rates.iter().sum();
        Some(MergerRateTable {
            b: b - 1,
            rates,
            total,
        })
    }
}

/// Law of the merger size `K` at state `b`: entry `k-2` is `C(b,k) λ_{b,k} / λ_b^tot`.
pub fn merger_size_pmf(m: &LambdaMeasure, b: u64) -> Result<Vec<f64>> {
    let table = MergerRateTable::new(m, b)?;
    Ok(table.rates.iter().map(|r| r / table.total).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CdiVerdict {
    ComesDown,
    StaysInfinite,
    Inconclusive,
}

impl std::fmt::Display for CdiVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CdiVerdict::ComesDown => "comes_down",
            CdiVerdict::StaysInfinite => "stays_infinite",
            CdiVerdict::Inconclusive => "inconclusive",
        })
    }
}

/// Outcome of the coming-down-from-infinity check. The verdict is a heuristic
/// read of a finite partial sum, never a proof.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdiDiagnostic {
    pub partial_sum: f64,
    pub verdict: CdiVerdict,
    /// Ratios of consecutive dyadic block sums of `1/γ_b` that the verdict was read from.
    pub block_ratios: Vec<f64>,
    pub heuristic: bool,
}

/// Dyadic blocks used by the verdict: at most this many trailing ratios.
const CDI_WINDOW: usize = 10;
const CDI_GEOMETRIC: f64 = 0.9;
const CDI_SETTLED: f64 = 0.8;
const CDI_FLAT: f64 = 0.95;
const CDI_DRIFT: f64 = 0.05;

/// Partial sum `Σ_{b=2}^{B} 1/γ_b` and a heuristic verdict on its convergence.
///
/// The terms are grouped into dyadic blocks `[2^j, 2^{j+1})` (from `b = 4`, full
/// blocks only). Block sums of a convergent series with polynomially growing
/// `γ_b` decay geometrically; block sums that stay flat, or whose ratios keep
/// drifting towards 1, indicate divergence.
pub fn cdi_diagnostic(m: &LambdaMeasure, big_b: u64) -> Result<CdiDiagnostic> {
    if big_b < 2 {
        return Err(Error::InvalidArgument(format!("need B >= 2, got {big_b}")));
    }
    let inv: Vec<f64> = (2..=big_b)
        .map(|b| gamma_b(m, b).map(|g| 1.0 / g))
        .collect::<Result<_>>()?;
    let partial_sum = inv.iter().sum();
    let mut blocks = Vec::new();
    let mut lo = 4u64;
    while 2 * lo - 1 <= big_b {
        blocks.push(
            inv[(lo - 2) as usize..(2 * lo - 2) as usize]
                .iter()
                .sum::<f64>(),
        );
        lo *= 2;
    }
    let mut ratios: Vec<f64> = blocks.windows(2).map(|w| w[1] / w[0]).collect();
    if ratios.len() > CDI_WINDOW {
        ratios.drain(..ratios.len() - CDI_WINDOW);
    }
    let verdict = verdict_from_ratios(&ratios);
    Ok(CdiDiagnostic {
        partial_sum,
        verdict,
        block_ratios: ratios,
        heuristic: true,
    })
}

fn verdict_from_ratios(ratios: &[f64]) -> CdiVerdict {
    if ratios.len() < 3 {
        return CdiVerdict::Inconclusive;
    }
    let last = *ratios.last().unwrap();
    // Drift over the second half of the window, where transients have died out.
    let half = &ratios[ratios.len() / 2..];
    let drift = last - half[0];
    let max = ratios.iter().cloned().fold(f64::MIN, f64::max);
    if last >= CDI_FLAT || (drift > CDI_DRIFT / 2.0 && last > CDI_SETTLED) {
        CdiVerdict::StaysInfinite
    } else if max <= CDI_GEOMETRIC && last <= CDI_SETTLED {
        CdiVerdict::ComesDown
    } else {
        CdiVerdict::Inconclusive
    }
}
