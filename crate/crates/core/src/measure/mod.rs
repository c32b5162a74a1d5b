//! Finite measures Λ on [0, 1] and their integral functionals.

mod density;
mod functionals;
mod parse;

use std::sync::OnceLock;

use sha2::{Digest, Sha256};

pub use density::{DensityFamily, Pt};
pub use functionals::{
    dust_integral, dust_integral_with, f_derivative, f_eval, f_eval_with, f_with_derivative, mu,
    mu_with, sigma2, sigma2_with, small_p_tail, small_p_tail_log, total_mass, Divergence,
    Functional, FunctionalKind,
};
pub use parse::parse_measure;

use crate::error::{Error, Result};
use crate::quadrature::{integrate_half_line, integrate_pieces, Estimate, QuadConfig, Tail};

/// A point mass strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub location: f64,
    pub mass: f64,
}

/// Log-coordinate of the split between the two halves of (0, 1).
pub(crate) const LN2: f64 = std::f64::consts::LN_2;

/// A finite, non-zero measure on [0, 1]: atoms at 0 and 1, interior atoms and
/// a sum of built-in density components.
#[derive(Debug)]
pub struct LambdaMeasure {
    atom_at_zero: f64,
    atom_at_one: f64,
    interior_atoms: Vec<Atom>,
    densities: Vec<DensityFamily>,
    spec: String,
    density_mass: f64,
    cache: FunctionalCache,
}

#[derive(Debug, Default)]
struct FunctionalCache {
    mu: OnceLock<std::result::Result<Functional, String>>,
    sigma2: OnceLock<std::result::Result<Functional, String>>,
    dust: OnceLock<std::result::Result<Functional, String>>,
}

impl Clone for LambdaMeasure {
    fn clone(&self) -> Self {
        Self {
            atom_at_zero: self.atom_at_zero,
            atom_at_one: self.atom_at_one,
            interior_atoms: self.interior_atoms.clone(),
            densities: self.densities.clone(),
            spec: self.spec.clone(),
            density_mass: self.density_mass,
            cache: FunctionalCache::default(),
        }
    }
}

/// A sub-range `[lo, hi]` of [0, 1] for restricted integrals; `None` means the endpoint 0 (resp. 1).
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Range {
    pub lo: Option<Pt>,
    pub hi: Option<Pt>,
}

impl LambdaMeasure {
    /// Builds and validates a measure. `spec` is the text it was parsed from
    /// (used for fingerprints and echoes).
    pub fn new(
        atom_at_zero: f64,
        atom_at_one: f64,
        mut interior_atoms: Vec<Atom>,
        densities: Vec<DensityFamily>,
        spec: impl Into<String>,
    ) -> Result<Self> {
        for (name, w) in [("atom at 0", atom_at_zero), ("atom at 1", atom_at_one)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidMeasure(format!(
                    "{name} has invalid mass {w}"
                )));
            }
        }
        for a in &interior_atoms {
            if !(a.location > 0.0 && a.location < 1.0) {
                return Err(Error::InvalidMeasure(format!(
                    "atom location {} outside (0,1)",
                    a.location
                )));
            }
            if !(a.mass > 0.0 && a.mass.is_finite()) {
                return Err(Error::InvalidMeasure(format!(
                    "atom mass {} must be positive",
                    a.mass
                )));
            }
        }
        interior_atoms.sort_by(|a, b| a.location.total_cmp(&b.location));
        if interior_atoms
            .windows(2)
            .any(|w| w[0].location == w[1].location)
        {
            return Err(Error::InvalidMeasure(
                "interior atom locations must be distinct".into(),
            ));
        }
        for d in &densities {
            let bad = match d {
                DensityFamily::Uniform { mass } | DensityFamily::Beta { mass, .. } => {
                    !(*mass > 0.0 && mass.is_finite())
                }
                DensityFamily::LogGamma { gamma } => !gamma.is_finite(),
                DensityFamily::Table { .. } => false,
            };
            if bad {
                return Err(Error::InvalidMeasure(format!(
                    "invalid density parameters {d:?}"
                )));
            }
        }
        let mut m = LambdaMeasure {
            atom_at_zero,
            atom_at_one,
            interior_atoms,
            densities,
            spec: spec.into(),
            density_mass: 0.0,
            cache: FunctionalCache::default(),
        };
        if !m.densities.is_empty() {
            let mass = m.integrate_density(
                &|pt| pt.p,
                &|pt| pt.q,
                Range::default(),
                &[],
                &QuadConfig::default(),
            );
            m.density_mass = match mass {
                Ok(Tail::Finite(e)) if e.value.is_finite() => e.value,
                _ => {
                    return Err(Error::InvalidMeasure(
                        "density is not integrable on (0,1)".into(),
                    ))
                }
            };
        }
        let total = m.total_mass();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidMeasure(format!(
                "total mass must be finite and positive, got {total}"
            )));
        }
        Ok(m)
    }

    /// Point mass `mass` at `location` in [0, 1].
    pub fn atom(location: f64, mass: f64) -> Result<Self> {
        let spec = format!("atom:{location}:{mass}");
        if location == 0.0 {
            Self::new(mass, 0.0, vec![], vec![], spec)
        } else if location == 1.0 {
            Self::new(0.0, mass, vec![], vec![], spec)
        } else {
            Self::new(0.0, 0.0, vec![Atom { location, mass }], vec![], spec)
        }
    }

    pub fn density(family: DensityFamily, spec: impl Into<String>) -> Result<Self> {
        Self::new(0.0, 0.0, vec![], vec![family], spec)
    }

    pub fn atom_at_zero(&self) -> f64 {
        self.atom_at_zero
    }

    pub fn atom_at_one(&self) -> f64 {
        self.atom_at_one
    }

    pub fn interior_atoms(&self) -> &[Atom] {
        &self.interior_atoms
    }

    pub fn densities(&self) -> &[DensityFamily] {
        &self.densities
    }

    pub fn has_density(&self) -> bool {
        !self.densities.is_empty()
    }

    pub fn spec(&self) -> &str {
        &self.spec
    }

    pub fn total_mass(&self) -> f64 {
        self.atom_at_zero
            + self.atom_at_one
            + self.interior_atoms.iter().map(|a| a.mass).sum::<f64>()
            + self.density_mass
    }

    /// First 16 hex digits of the SHA-256 of the spec text.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.spec.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Sum of all density components at `pt`.
    #[inline]
    pub fn density_at(&self, pt: &Pt) -> f64 {
        self.densities.iter().map(|d| d.eval(pt)).sum()
    }

    pub(crate) fn density_sup_on(&self, lo: &Pt, hi: &Pt) -> f64 {
        self.densities.iter().map(|d| d.sup_on(lo, hi)).sum()
    }

    /// Combined `(alpha, A)` with `density(p) <= A p^{alpha-1}` on `(0, edge.p]`.
    pub(crate) fn head_bound(&self, edge: &Pt) -> (f64, f64) {
        combine_power_bounds(self.densities.iter().map(|d| d.head_bound(edge)), edge.p)
    }

    pub(crate) fn tail_bound(&self, edge: &Pt) -> (f64, f64) {
        combine_power_bounds(self.densities.iter().map(|d| d.tail_bound(edge)), edge.q)
    }

    fn breakpoints(&self) -> (Vec<f64>, Vec<f64>) {
        let mut us = Vec::new();
        let mut vs = Vec::new();
        for d in &self.densities {
            for &x in d.breakpoints() {
                if x <= 0.5 {
                    us.push(-x.ln());
                } else {
                    vs.push(-(1.0 - x).ln());
                }
            }
        }
        (us, vs)
    }

    /// `∫_range g(p) ρ(p) dp` over the density part only.
    ///
    /// `left(pt)` must return `g(p)·p` and `right(pt)` must return `g(p)·q`;
    /// the integral is taken in `u = log 1/p` on (0, ½] and in `v = log 1/q`
    /// on [½, 1). `extra_u` / `extra_v` are additional panel breakpoints.
    pub(crate) fn integrate_density(
        &self,
        left: &dyn Fn(&Pt) -> f64,
        right: &dyn Fn(&Pt) -> f64,
        range: Range,
        extra: &[(Side, f64)],
        cfg: &QuadConfig,
    ) -> Result<Tail> {
        if self.densities.is_empty() {
            return Ok(Tail::Finite(Estimate::default()));
        }
        let (mut ubreaks, mut vbreaks) = self.breakpoints();
        for &(side, x) in extra {
            match side {
                Side::Left => ubreaks.push(x),
                Side::Right => vbreaks.push(x),
            }
        }
        ubreaks.sort_by(f64::total_cmp);
        vbreaks.sort_by(f64::total_cmp);

        let fu = |u: f64| {
            let pt = Pt::from_u(u);
            let d = self.density_at(&pt);
            if d == 0.0 {
                0.0
            } else {
                left(&pt) * d
            }
        };
        let fv = |v: f64| {
            let pt = Pt::from_v(v);
            let d = self.density_at(&pt);
            if d == 0.0 {
                0.0
            } else {
                right(&pt) * d
            }
        };

        // Left half: p in [lo, min(hi, 1/2)]  <=>  u in [max(u_hi, ln2), u_lo].
        let u_start = range.hi.map_or(LN2, |h| h.u.max(LN2));
        let u_end = range.lo.map(|l| l.u);
        // Right half: p in [max(lo, 1/2), hi]  <=>  v in [max(v_lo, ln2), v_hi].
        let v_start = range.lo.map_or(LN2, |l| l.v.max(LN2));
        let v_end = range.hi.map(|h| h.v);

        let mut finite = Estimate::default();
        let left_active = range.lo.is_none_or(|l| l.p < 0.5);
        let right_active = range.hi.is_none_or(|h| h.p > 0.5);

        // Finite parts first, so that half-line growth is judged on the whole integral.
        let mut left_tail_from = None;
        if left_active {
            match u_end {
                Some(ue) if ue > u_start => {
                    finite += integrate_pieces(&fu, u_start, ue, &ubreaks, cfg)?
                }
                Some(_) => {}
                None => {
                    let last = ubreaks
                        .iter()
                        .cloned()
                        .filter(|&x| x > u_start)
                        .fold(u_start, f64::max);
                    if last > u_start {
                        finite += integrate_pieces(&fu, u_start, last, &ubreaks, cfg)?;
                    }
                    left_tail_from = Some(last);
                }
            }
        }
        let mut right_tail_from = None;
        if right_active {
            match v_end {
                Some(ve) if ve > v_start => {
                    finite += integrate_pieces(&fv, v_start, ve, &vbreaks, cfg)?
                }
                Some(_) => {}
                None => {
                    let last = vbreaks
                        .iter()
                        .cloned()
                        .filter(|&x| x > v_start)
                        .fold(v_start, f64::max);
                    if last > v_start {
                        finite += integrate_pieces(&fv, v_start, last, &vbreaks, cfg)?;
                    }
                    right_tail_from = Some(last);
                }
            }
        }
        let mut total = finite;
        if let Some(start) = right_tail_from {
            match integrate_half_line(&fv, start, total.value, cfg)? {
                Tail::Finite(e) => total += e,
                Tail::Divergent => return Ok(Tail::Divergent),
            }
        }
        if let Some(start) = left_tail_from {
            match integrate_half_line(&fu, start, total.value, cfg)? {
                Tail::Finite(e) => total += e,
                Tail::Divergent => return Ok(Tail::Divergent),
            }
        }
        Ok(Tail::Finite(total))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Side {
    Left,
    Right,
}

fn combine_power_bounds(bounds: impl Iterator<Item = (f64, f64)>, edge: f64) -> (f64, f64) {
    let bounds: Vec<_> = bounds.collect();
    let alpha = bounds.iter().map(|b| b.0).fold(1.0, f64::min);
    // x^{a_j - 1} <= x^{alpha - 1} edge^{a_j - alpha} on (0, edge]
    let a = bounds
        .iter()
        .map(|&(aj, cj)| cj * edge.powf(aj - alpha))
        .sum();
    (alpha, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_measures() {
        assert!(LambdaMeasure::atom(0.5, -1.0).is_err());
        assert!(LambdaMeasure::atom(1.5, 1.0).is_err());
        assert!(LambdaMeasure::new(0.0, 0.0, vec![], vec![], "").is_err());
        let dup = vec![
            Atom {
                location: 0.3,
                mass: 1.0,
            },
            Atom {
                location: 0.3,
                mass: 2.0,
            },
        ];
        assert!(LambdaMeasure::new(0.0, 0.0, dup, vec![], "").is_err());
    }

    #[test]
    fn density_masses() {
        let bs = LambdaMeasure::density(DensityFamily::Uniform { mass: 1.0 }, "u").unwrap();
        assert!((bs.total_mass() - 1.0).abs() < 1e-10);
        let beta =
            LambdaMeasure::density(DensityFamily::beta(0.5, 1.5, 3.0).unwrap(), "b").unwrap();
        assert!((beta.total_mass() - 3.0).abs() < 1e-9);
        // ∫ (1+log 1/p)^{-1} dp = e·E1(1) ≈ 0.596347362323194
        let lg = LambdaMeasure::density(DensityFamily::LogGamma { gamma: 1.0 }, "lg").unwrap();
        assert!((lg.total_mass() - 0.596_347_362_323_194).abs() < 1e-10);
    }

    #[test]
    fn fingerprint_is_stable_hex() {
        let a = LambdaMeasure::atom(0.5, 1.0).unwrap();
        let b = LambdaMeasure::atom(0.5, 1.0).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 16);
    }
}
