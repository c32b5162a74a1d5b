//! Centering and scaling constants: `κ`, `b_n = β_{log n}`, the expansion of
//! `b_n` in powers of `f`, the small-`p` constant `c`, and the CLT variance.

use std::cell::RefCell;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::{
    dust_integral, f_eval, mu, sigma2, small_p_tail_log, Functional, LambdaMeasure,
};
use crate::quadrature::{integrate_pieces, QuadConfig};

/// Absolute width of the final `κ` bracket.
const KAPPA_TOL: f64 = 1e-12;
/// `log(1/r)` ladder for the small-`p` constant.
pub const PROP2_LADDER: [f64; 6] = [1e1, 1e2, 1e3, 1e4, 1e5, 1e6];
/// Relative Cauchy window of the ladder.
const PROP2_WINDOW: f64 = 0.05;

fn finite_mu(m: &LambdaMeasure) -> Result<f64> {
    let mu = mu(m)?;
    if !mu.is_finite() {
        return Err(Error::Domain("μ = ∞".into()));
    }
    if !dust_integral(m)?.is_finite() {
        return Err(Error::Domain(
            "f is only finite for measures with dust".into(),
        ));
    }
    Ok(mu.value)
}

/// The smallest `y >= 0` with `f(y) <= μ/2`.
pub fn kappa(m: &LambdaMeasure) -> Result<f64> {
    let half = 0.5 * finite_mu(m)?;
    if f_eval(m, 0.0)? <= half {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while f_eval(m, hi)? > half {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Domain("f stays above μ/2 up to y = 1e6".into()));
        }
    }
    while hi - lo > KAPPA_TOL * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if f_eval(m, mid)? > half {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// `∫_a^b g(f(y)) dy`, with panel edges at `a + 2^k` and at `extra`.
fn integrate_over_f(
    m: &LambdaMeasure,
    a: f64,
    b: f64,
    extra: &[f64],
    g: impl Fn(f64) -> f64,
) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    let failure = RefCell::new(None);
    let h = |y: f64| match f_eval(m, y) {
        Ok(f) => g(f),
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            f64::NAN
        }
    };
    let mut breaks: Vec<f64> = extra.to_vec();
    let mut step = 1.0;
    while a + step < b {
        breaks.push(a + step);
        step *= 2.0;
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let out = integrate_pieces(&h, a, b, &breaks, &QuadConfig::default());
    match (out, failure.into_inner()) {
        (_, Some(e)) => Err(e),
        (Ok(e), None) => Ok(e.value),
        (Err(e), None) => Err(e),
    }
}

/// `β_z = ∫_κ^z dy/(μ - f(y))`; 0 when `z <= κ`.
pub fn beta(m: &LambdaMeasure, z: f64) -> Result<f64> {
    let mu = finite_mu(m)?;
    let k = kappa(m)?;
    beta_from(m, mu, k, z)
}

fn beta_from(m: &LambdaMeasure, mu: f64, kappa: f64, z: f64) -> Result<f64> {
    if z <= kappa {
        return Ok(0.0);
    }
    // 1/(μ-f) = 1/μ + f/(μ(μ-f)); the second part is small and integrated to relative accuracy.
    let excess = integrate_over_f(m, kappa, z, &[], |f| f / (mu * (mu - f)))?;
    Ok((z - kappa) / mu + excess)
}

/// `b_n = ∫_κ^{log n} dy/(μ - f(y))`.
pub fn b_n(m: &LambdaMeasure, n: f64) -> Result<f64> {
    if !(n >= 2.0) {
        return Err(Error::InvalidArgument(format!("need n >= 2, got {n}")));
    }
    beta(m, n.ln())
}

/// `β̃_z = ∫_0^z dy/(μ - f̃(y))` with `f̃ = min(f, μ/2)`: the centering of the
/// flow `ρ^z`, for which `ρ^z(β̃_z) = 0`. Equals `β_z + 2κ/μ` for `z >= κ`.
pub fn beta_clamped(m: &LambdaMeasure, z: f64) -> Result<f64> {
    let mu = finite_mu(m)?;
    let k = kappa(m)?;
    let clamped = |f: f64| f.min(0.5 * mu);
    let excess = integrate_over_f(m, 0.0, z, &[k], |f| clamped(f) / (mu * (mu - clamped(f))))?;
    Ok(z / mu + excess)
}

/// Partial expansion `b_n ≈ Σ_j μ^{-(j+1)} ∫_0^{log n} f̃^j dy`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BnExpansion {
    pub log_n: f64,
    pub terms: Vec<f64>,
    /// Upper bound `2 μ^{-(k+2)} ∫_0^{log n} f̃^{k+1}` on the (nonnegative) remainder.
    pub remainder_bound: f64,
    /// `2κ/μ`: the terms expand `β̃_{log n} = b_n + 2κ/μ`.
    pub kappa_shift: f64,
}

impl BnExpansion {
    pub fn partial_sum(&self) -> f64 {
        self.terms.iter().sum()
    }

    /// Interval guaranteed to contain `b_n` (for `log n >= κ`).
    pub fn bracket(&self) -> (f64, f64) {
        let s = self.partial_sum() - self.kappa_shift;
        (s, s + self.remainder_bound)
    }
}

/// Terms `j = 0..=order` of the expansion of `b_n` in powers of `f̃ = min(f, μ/2)`.
pub fn bn_expansion(m: &LambdaMeasure, n: f64, order: usize) -> Result<BnExpansion> {
    let mu = finite_mu(m)?;
    let k = kappa(m)?;
    let log_n = n.ln();
    let clamped = |f: f64| f.min(0.5 * mu);
    let power_integral =
        |j: usize| integrate_over_f(m, 0.0, log_n, &[k], |f| clamped(f).powi(j as i32));
    let mut terms = vec![log_n / mu];
    for j in 1..=order {
        terms.push(power_integral(j)? / mu.powi(j as i32 + 1));
    }
    let remainder_bound = 2.0 * power_integral(order + 1)? / mu.powi(order as i32 + 2);
    Ok(BnExpansion {
        log_n,
        terms,
        remainder_bound,
        kappa_shift: 2.0 * k / mu,
    })
}

/// Ladder estimate of `c = lim √(log 1/r) ∫_{[0,r]} Λ(dp)/p`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop2Estimate {
    pub c: f64,
    /// `(log 1/r, value)` along [`PROP2_LADDER`].
    pub sequence: Vec<(f64, f64)>,
    /// Whether the last two ladder values agree within 5% of the sequence scale.
    pub converged: bool,
}

/// Evaluates the small-`p` sequence on the ladder and extrapolates it by Aitken's Δ².
pub fn prop2_c(m: &LambdaMeasure) -> Result<Prop2Estimate> {
    let sequence = PROP2_LADDER
        .iter()
        .map(|&l| Ok((l, small_p_tail_log(m, l)?)))
        .collect::<Result<Vec<_>>>()?;
    let x: Vec<f64> = sequence.iter().map(|s| s.1).collect();
    let n = x.len();
    let (x0, x1, x2) = (x[n - 3], x[n - 2], x[n - 1]);
    let denom = x2 - 2.0 * x1 + x0;
    let aitken = if denom.abs() > 1e-300 {
        x2 - (x2 - x1).powi(2) / denom
    } else {
        x2
    };
    // Fall back to the last term when the extrapolation leaves the ladder's range.
    let (lo, hi) = (x0.min(x2).min(0.0), x0.max(x2));
    let c = if aitken.is_finite() && aitken >= lo - (hi - lo) && aitken <= hi + (hi - lo) {
        aitken
    } else {
        x2
    };
    let scale = x2.abs().max(x[0].abs());
    let converged = (x2 - x1).abs() <= PROP2_WINDOW * scale;
    Ok(Prop2Estimate {
        c: c.max(0.0),
        sequence,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CltParams {
    pub mu: f64,
    pub sigma2: f64,
    /// `σ²/μ³`.
    pub variance: f64,
}

pub fn clt_params(m: &LambdaMeasure) -> Result<CltParams> {
    let mu = mu(m)?;
    let s2 = sigma2(m)?;
    if !mu.is_finite() || !s2.is_finite() {
        return Err(Error::Domain("the CLT needs μ < ∞ and σ² < ∞".into()));
    }
    Ok(CltParams {
        mu: mu.value,
        sigma2: s2.value,
        variance: s2.value / mu.value.powi(3),
    })
}

/// Everything computable for one measure; entries that do not apply are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticProfile {
    pub mu: Functional,
    pub sigma2: Functional,
    pub dust: Functional,
    pub kappa: Option<f64>,
    pub clt_variance: Option<f64>,
    pub c_estimate: Option<Prop2Estimate>,
}

pub fn profile(m: &LambdaMeasure) -> Result<AsymptoticProfile> {
    let mu = mu(m)?;
    let sigma2 = sigma2(m)?;
    let dust = dust_integral(m)?;
    let kappa = if mu.is_finite() && dust.is_finite() {
        Some(kappa(m)?)
    } else {
        None
    };
    let clt_variance = clt_params(m).ok().map(|c| c.variance);
    let c_estimate = if dust.is_finite() {
        Some(prop2_c(m)?)
    } else {
        None
    };
    Ok(AsymptoticProfile {
        mu,
        sigma2,
        dust,
        kappa,
        clt_variance,
        c_estimate,
    })
}
