use std::sync::OnceLock;

use super::{LambdaMeasure, Pt, Range, Side};
use crate::error::{Error, Result};
use crate::quadrature::{Estimate, QuadConfig, Tail};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FunctionalKind {
    Mu,
    Sigma2,
    Dust,
    TotalMass,
    FAt(f64),
    SmallPTail(f64),
}

/// Why a functional is infinite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Divergence {
    AtomAtZero,
    AtomAtOne,
    /// Declared by the cutoff-doubling rule; an operational verdict, not a proof.
    Detected,
}

/// Value of an integral functional; `value` is exactly `+∞` when divergent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Functional {
    pub kind: FunctionalKind,
    pub value: f64,
    pub abs_error: f64,
    pub divergence: Option<Divergence>,
}

impl Functional {
    fn finite(kind: FunctionalKind, e: Estimate) -> Self {
        Functional {
            kind,
            value: e.value,
            abs_error: e.abs_error,
            divergence: None,
        }
    }

    fn infinite(kind: FunctionalKind, why: Divergence) -> Self {
        Functional {
            kind,
            value: f64::INFINITY,
            abs_error: 0.0,
            divergence: Some(why),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.divergence.is_none()
    }
}

fn combine(kind: FunctionalKind, atoms: f64, density: Tail) -> Functional {
    match density {
        Tail::Finite(e) => Functional::finite(
            kind,
            Estimate {
                value: e.value + atoms,
                abs_error: e.abs_error,
            },
        ),
        Tail::Divergent => Functional::infinite(kind, Divergence::Detected),
    }
}

fn cached(
    cell: &OnceLock<std::result::Result<Functional, String>>,
    compute: impl FnOnce() -> Result<Functional>,
) -> Result<Functional> {
    cell.get_or_init(|| compute().map_err(|e| e.to_string()))
        .clone()
        .map_err(|msg| Error::Domain(format!("cached functional failed: {msg}")))
}

/// `μ = ∫ log(1/(1-p)) Λ(dp)/p²`.
pub fn mu(m: &LambdaMeasure) -> Result<Functional> {
    cached(&m.cache.mu, || mu_with(m, &QuadConfig::default()))
}

pub fn mu_with(m: &LambdaMeasure, cfg: &QuadConfig) -> Result<Functional> {
    let kind = FunctionalKind::Mu;
    if m.atom_at_zero > 0.0 {
        return Ok(Functional::infinite(kind, Divergence::AtomAtZero));
    }
    if m.atom_at_one > 0.0 {
        return Ok(Functional::infinite(kind, Divergence::AtomAtOne));
    }
    let atoms = m.interior_atoms.iter().map(|a| {
        let pt = Pt::at(a.location);
        a.mass * pt.v / (pt.p * pt.p)
    });
    let dens = m.integrate_density(
        &|pt| pt.phi1(),
        &|pt| pt.v * pt.q / (pt.p * pt.p),
        Range::default(),
        &[],
        cfg,
    )?;
    Ok(combine(kind, atoms.sum(), dens))
}

/// `σ² = ∫ log(1/(1-p))² Λ(dp)/p²`.
pub fn sigma2(m: &LambdaMeasure) -> Result<Functional> {
    cached(&m.cache.sigma2, || sigma2_with(m, &QuadConfig::default()))
}

pub fn sigma2_with(m: &LambdaMeasure, cfg: &QuadConfig) -> Result<Functional> {
    let kind = FunctionalKind::Sigma2;
    if m.atom_at_zero > 0.0 {
        return Ok(Functional::infinite(kind, Divergence::AtomAtZero));
    }
    if m.atom_at_one > 0.0 {
        return Ok(Functional::infinite(kind, Divergence::AtomAtOne));
    }
    let atoms = m.interior_atoms.iter().map(|a| {
        let pt = Pt::at(a.location);
        a.mass * pt.v * pt.v / (pt.p * pt.p)
    });
    let dens = m.integrate_density(
        &|pt| pt.phi1() * pt.v,
        &|pt| pt.v * pt.v * pt.q / (pt.p * pt.p),
        Range::default(),
        &[],
        cfg,
    )?;
    Ok(combine(kind, atoms.sum(), dens))
}

/// `∫ Λ(dp)/p`; finite exactly for coalescents with dust.
pub fn dust_integral(m: &LambdaMeasure) -> Result<Functional> {
    cached(&m.cache.dust, || {
        dust_integral_with(m, &QuadConfig::default())
    })
}

pub fn dust_integral_with(m: &LambdaMeasure, cfg: &QuadConfig) -> Result<Functional> {
    let kind = FunctionalKind::Dust;
    if m.atom_at_zero > 0.0 {
        return Ok(Functional::infinite(kind, Divergence::AtomAtZero));
    }
    let atoms = m.atom_at_one
        + m.interior_atoms
            .iter()
            .map(|a| a.mass / a.location)
            .sum::<f64>();
    let dens = m.integrate_density(&|_| 1.0, &|pt| pt.q / pt.p, Range::default(), &[], cfg)?;
    Ok(combine(kind, atoms, dens))
}

pub fn total_mass(m: &LambdaMeasure) -> Functional {
    Functional::finite(
        FunctionalKind::TotalMass,
        Estimate {
            value: m.total_mass(),
            abs_error: 0.0,
        },
    )
}

fn require_dust(m: &LambdaMeasure) -> Result<()> {
    let dust = dust_integral(m)?;
    if dust.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(
            "f is only finite for measures with dust (∫Λ(dp)/p < ∞)".into(),
        ))
    }
}

/// `(1 - e^{-x}) / x`, extended by 1 at 0.
#[inline]
fn one_minus_exp_ratio(x: f64) -> f64 {
    if x < 1e-300 {
        1.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// Panel edges at `u = y` and at `y ± 2^k` around it: the `f`-type integrands
/// switch from `e^{u-y}` decay to `O(1)` at `u = y`.
fn crossover_breaks(y: f64) -> Vec<(Side, f64)> {
    let mut out: Vec<_> = (0..=6)
        .map(|k| (Side::Left, y + f64::from(1 << k)))
        .filter(|b| b.1 > super::LN2)
        .collect();
    let mut gap = 0.0;
    while y - gap > super::LN2 {
        out.push((Side::Left, y - gap));
        gap = if gap == 0.0 { 1.0 } else { 2.0 * gap };
    }
    out
}

/// `f(y) = ∫ (1 - (1-p)^{e^y}) e^{-y} Λ(dp)/p²`.
pub fn f_eval(m: &LambdaMeasure, y: f64) -> Result<f64> {
    Ok(f_eval_with(m, y, &QuadConfig::default())?.value)
}

pub fn f_eval_with(m: &LambdaMeasure, y: f64, cfg: &QuadConfig) -> Result<Estimate> {
    require_dust(m)?;
    // e^y·v is formed in log space so that very large `y` neither overflows nor loses the small-p mass.
    let sv = |pt: &Pt| (y + pt.ln_v()).exp();
    let inv_s = (-y).exp();
    let atoms = m.atom_at_one * inv_s
        + m.interior_atoms
            .iter()
            .map(|a| {
                let pt = Pt::at(a.location);
                a.mass * -(-sv(&pt)).exp_m1() * inv_s / (pt.p * pt.p)
            })
            .sum::<f64>();
    let dens = m.integrate_density(
        &|pt| one_minus_exp_ratio(sv(pt)) * pt.phi1(),
        &|pt| -(-sv(pt)).exp_m1() * inv_s * pt.q / (pt.p * pt.p),
        Range::default(),
        &crossover_breaks(y),
        cfg,
    )?;
    match dens {
        Tail::Finite(e) => Ok(Estimate {
            value: e.value + atoms,
            abs_error: e.abs_error,
        }),
        Tail::Divergent => Err(Error::Domain(
            "f diverged although the dust integral is finite".into(),
        )),
    }
}

/// `f'(y) = ∫ log(1/(1-p)) (1-p)^{e^y} Λ(dp)/p² - f(y)`.
pub fn f_derivative(m: &LambdaMeasure, y: f64) -> Result<f64> {
    Ok(f_with_derivative(m, y)?.1)
}

/// `(f(y), f'(y))`.
pub fn f_with_derivative(m: &LambdaMeasure, y: f64) -> Result<(f64, f64)> {
    let cfg = QuadConfig::default();
    let f = f_eval_with(m, y, &cfg)?.value;
    let decay = |pt: &Pt| (-(y + pt.ln_v()).exp()).exp();
    let atoms = m
        .interior_atoms
        .iter()
        .map(|a| {
            let pt = Pt::at(a.location);
            a.mass * pt.v * decay(&pt) / (pt.p * pt.p)
        })
        .sum::<f64>();
    let dens = m.integrate_density(
        &|pt| pt.phi1() * decay(pt),
        &|pt| pt.v * decay(pt) * pt.q / (pt.p * pt.p),
        Range::default(),
        &crossover_breaks(y),
        &cfg,
    )?;
    match dens {
        Tail::Finite(e) => Ok((f, e.value + atoms - f)),
        Tail::Divergent => Err(Error::Domain("f' diverged".into())),
    }
}

/// `√(log 1/r) · ∫_{[0,r]} Λ(dp)/p` for `0 < r < 1`.
pub fn small_p_tail(m: &LambdaMeasure, r: f64) -> Result<f64> {
    small_p_tail_log(m, -r.ln())
}

/// [`small_p_tail`] parametrised by `L = log(1/r)`, usable far below `f64` underflow.
pub fn small_p_tail_log(m: &LambdaMeasure, log_inv_r: f64) -> Result<f64> {
    if !(log_inv_r > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "r must lie in (0,1), got log(1/r) = {log_inv_r}"
        )));
    }
    require_dust(m)?;
    let r = Pt::from_u(log_inv_r);
    let atoms: f64 = m
        .interior_atoms
        .iter()
        .filter(|a| a.location <= r.p)
        .map(|a| a.mass / a.location)
        .sum();
    let range = Range {
        lo: None,
        hi: Some(r),
    };
    let dens = m.integrate_density(
        &|_| 1.0,
        &|pt| pt.q / pt.p,
        range,
        &[],
        &QuadConfig::default(),
    )?;
    match dens {
        Tail::Finite(e) => Ok(log_inv_r.sqrt() * (e.value + atoms)),
        Tail::Divergent => Err(Error::Domain("small-p tail diverged".into())),
    }
}
