//! Adaptive Gauss–Kronrod quadrature on finite intervals and on half-lines.
//!
//! Half-line integrals are evaluated by doubling the cutoff and integrating
//! each new panel adaptively. The doubling sequence doubles as a divergence
//! detector: a total that keeps growing by more than 1% per doubling while
//! the panel increments refuse to shrink geometrically is reported as
//! divergent rather than as a tolerance failure.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.000_000_000_000_000_000_000_000_000_000_000,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Growth factor per doubling above which a half-line total counts as growing.
pub const DIVERGENCE_GROWTH: f64 = 1.01;
/// Consecutive growing doublings needed to declare divergence.
pub const DIVERGENCE_RUN: usize = 8;
/// Panel increments shrinking slower than this ratio per doubling are not
/// geometrically decaying.
const STALLED_DECAY: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_intervals: usize,
    pub max_doublings: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_intervals: 4000,
            max_doublings: 220,
        }
    }
}

impl QuadConfig {
    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    fn target(&self, value: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * value.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Estimate {
    pub value: f64,
    pub abs_error: f64,
}

impl std::ops::Add for Estimate {
    type Output = Estimate;
    fn add(self, rhs: Estimate) -> Estimate {
        Estimate {
            value: self.value + rhs.value,
            abs_error: self.abs_error + rhs.abs_error,
        }
    }
}

impl std::ops::AddAssign for Estimate {
    fn add_assign(&mut self, rhs: Estimate) {
        *self = *self + rhs;
    }
}

/// Result of a half-line integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tail {
    Finite(Estimate),
    Divergent,
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut resk = fc * WGK[7];
    let mut resg = fc * WG[3];
    let mut resabs = resk.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        resk += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = resk * 0.5;
    let mut resasc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        resasc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let result = resk * half;
    let resasc = resasc * half.abs();
    let resabs = resabs * half.abs();
    let mut err = ((resk - resg) * half).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (1.0_f64).min((200.0 * err / resasc).powf(1.5));
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * resabs);
    }
    (result, err)
}

#[derive(Debug)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Adaptive 15-point Gauss–Kronrod integration of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, cfg: &QuadConfig) -> Result<Estimate> {
    if a == b {
        return Ok(Estimate::default());
    }
    let (value, err) = gk15(&f, a, b);
    if !value.is_finite() {
        return Err(Error::Quadrature {
            value,
            achieved: f64::INFINITY,
        });
    }
    let mut heap = BinaryHeap::new();
    heap.push(Panel { a, b, value, err });
    let mut total = value;
    let mut total_err = err;
    while total_err > cfg.target(total) {
        if heap.len() >= cfg.max_intervals {
            return Err(Error::Quadrature {
                value: total,
                achieved: total_err,
            });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Panel cannot be split any further in floating point.
            heap.push(worst);
            return Err(Error::Quadrature {
                value: total,
                achieved: total_err,
            });
        }
        let (v1, e1) = gk15(&f, worst.a, mid);
        let (v2, e2) = gk15(&f, mid, worst.b);
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.err;
        heap.push(Panel {
            a: worst.a,
            b: mid,
            value: v1,
            err: e1,
        });
        heap.push(Panel {
            a: mid,
            b: worst.b,
            value: v2,
            err: e2,
        });
        if !total.is_finite() {
            return Err(Error::Quadrature {
                value: total,
                achieved: f64::INFINITY,
            });
        }
    }
    // Re-sum to shed accumulated cancellation in the running total.
    let (value, abs_error) = heap
        .iter()
        .fold((0.0, 0.0), |(v, e), p| (v + p.value, e + p.err));
    Ok(Estimate { value, abs_error })
}

/// Integrates over `[a, b_1], [b_1, b_2], ...` for the sorted interior breakpoints in `breaks`.
pub fn integrate_pieces<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    breaks: &[f64],
    cfg: &QuadConfig,
) -> Result<Estimate> {
    let mut acc = Estimate::default();
    let mut lo = a;
    for &x in breaks.iter().filter(|&&x| x > a && x < b) {
        acc += integrate(f, lo, x, cfg)?;
        lo = x;
    }
    acc += integrate(f, lo, b, cfg)?;
    Ok(acc)
}

/// Integrates `f` over `[start, ∞)` by cutoff doubling.
///
/// The first panel is `[start, start + w]` with `w = max(64, |start|)`; every
/// further panel doubles the width. `base` is a finite contribution already
/// accumulated elsewhere (for example the bounded part of the same integral);
/// it enters only the growth test so that divergence is judged on the whole
/// integral.
pub fn integrate_half_line<F: Fn(f64) -> f64>(
    f: &F,
    start: f64,
    base: f64,
    cfg: &QuadConfig,
) -> Result<Tail> {
    let mut width = start.abs().max(64.0);
    let mut lo = start;
    let mut acc = Estimate::default();
    let mut growing_run = 0usize;
    let mut small_run = 0usize;
    let mut prev_increment: Option<f64> = None;
    for _ in 0..cfg.max_doublings {
        let hi = lo + width;
        let running = (base + acc.value).abs();
        let piece_cfg = QuadConfig {
            abs_tol: 0.1 * cfg.target(running).max(cfg.abs_tol),
            ..*cfg
        };
        let piece = integrate(f, lo, hi, &piece_cfg)?;
        let before = base + acc.value;
        acc += piece;
        let after = base + acc.value;

        let stalled = match prev_increment {
            Some(prev) if prev != 0.0 => piece.value.abs() >= STALLED_DECAY * prev.abs(),
            _ => true,
        };
        if before > 0.0 && after > DIVERGENCE_GROWTH * before && stalled {
            growing_run += 1;
            if growing_run >= DIVERGENCE_RUN {
                return Ok(Tail::Divergent);
            }
        } else {
            growing_run = 0;
        }

        if piece.value.abs() <= cfg.target(after) {
            small_run += 1;
            if small_run >= 2 {
                acc.abs_error += piece.value.abs();
                return Ok(Tail::Finite(acc));
            }
        } else {
            small_run = 0;
        }
        prev_increment = Some(piece.value);
        lo = hi;
        width *= 2.0;
        if !hi.is_finite() {
            break;
        }
    }
    Err(Error::Quadrature {
        value: base + acc.value,
        achieved: prev_increment.map_or(f64::INFINITY, f64::abs),
    })
}
