use std::path::Path;

use statrs::function::beta::ln_beta;

use crate::error::{Error, Result};

/// A location in (0, 1) carried in four coordinates so that both endpoint
/// regions keep full relative precision: `p`, `q = 1 - p`,
/// `u = log(1/p)` and `v = log(1/q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pt {
    pub p: f64,
    pub q: f64,
    pub u: f64,
    pub v: f64,
}

impl Pt {
    pub fn from_u(u: f64) -> Pt {
        let p = (-u).exp();
        Pt {
            p,
            q: -(-u).exp_m1(),
            u,
            v: -(-p).ln_1p(),
        }
    }

    pub fn from_v(v: f64) -> Pt {
        let q = (-v).exp();
        Pt {
            p: -(-v).exp_m1(),
            q,
            u: -(-q).ln_1p(),
            v,
        }
    }

    /// Accurate for `p <= 1/2`.
    pub fn from_p(p: f64) -> Pt {
        Pt {
            p,
            q: 1.0 - p,
            u: -p.ln(),
            v: -(-p).ln_1p(),
        }
    }

    /// Accurate for `q <= 1/2`.
    pub fn from_q(q: f64) -> Pt {
        Pt {
            p: 1.0 - q,
            q,
            u: -(-q).ln_1p(),
            v: -q.ln(),
        }
    }

    /// Picks whichever of [`Pt::from_p`] / [`Pt::from_q`] is accurate.
    pub fn at(p: f64) -> Pt {
        if p <= 0.5 {
            Pt::from_p(p)
        } else {
            Pt::from_q(1.0 - p)
        }
    }

    /// `log v`, finite even where `p` underflows.
    #[inline]
    pub fn ln_v(&self) -> f64 {
        if self.p <= 0.5 {
            self.phi1().ln() - self.u
        } else {
            self.v.ln()
        }
    }

    /// `log(1/(1-p)) / p`, extended by its limit 1 at `p = 0`.
    #[inline]
    pub fn phi1(&self) -> f64 {
        if self.p == 0.0 {
            1.0
        } else {
            self.v / self.p
        }
    }
}

/// A built-in density component of Λ on (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub enum DensityFamily {
    /// `mass · dp`; mass 1 is the Bolthausen–Sznitman coalescent.
    Uniform { mass: f64 },
    /// `(1 + log(1/p))^{-γ} dp`.
    LogGamma { gamma: f64 },
    /// `mass · p^{a-1} (1-p)^{b-1} / B(a, b) dp`.
    Beta {
        a: f64,
        b: f64,
        mass: f64,
        log_norm: f64,
    },
    /// Piecewise constant: `values[i]` on `(edges[i], edges[i+1])`, `edges[0] = 0`, last edge 1.
    Table { edges: Vec<f64>, values: Vec<f64> },
}

fn pow_term(exponent: f64, log_base: f64) -> f64 {
    // exponent * log(base) with 0 * ∞ read as 0
    if exponent == 0.0 {
        0.0
    } else {
        exponent * log_base
    }
}

impl DensityFamily {
    pub fn beta(a: f64, b: f64, mass: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidMeasure(format!(
                "beta parameters must be positive, got a={a}, b={b}"
            )));
        }
        Ok(DensityFamily::Beta {
            a,
            b,
            mass,
            log_norm: mass.ln() - ln_beta(a, b),
        })
    }

    /// Reads a table density: one `upper_edge,value` pair per line, intervals
    /// start at 0 and the last upper edge must be 1. `#` starts a comment.
    pub fn table_from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut edges = vec![0.0];
        let mut values = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split([',', ' ', '\t']).filter(|s| !s.is_empty());
            let parse = |s: Option<&str>| -> Result<f64> {
                s.and_then(|s| s.parse::<f64>().ok())
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| {
                        Error::InvalidMeasure(format!(
                            "{}:{}: expected `edge,value`",
                            path.display(),
                            lineno + 1
                        ))
                    })
            };
            let edge = parse(fields.next())?;
            let value = parse(fields.next())?;
            edges.push(edge);
            values.push(value);
        }
        Self::table(edges, values)
    }

    pub fn table(edges: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || edges.len() != values.len() + 1 {
            return Err(Error::InvalidMeasure(
                "table density needs at least one piece".into(),
            ));
        }
        if edges.windows(2).any(|w| !(w[1] > w[0]))
            || edges[0] != 0.0
            || *edges.last().unwrap() != 1.0
        {
            return Err(Error::InvalidMeasure(
                "table edges must increase strictly from 0 to 1".into(),
            ));
        }
        if values.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidMeasure(
                "table density values must be nonnegative".into(),
            ));
        }
        Ok(DensityFamily::Table { edges, values })
    }

    #[inline]
    pub fn eval(&self, pt: &Pt) -> f64 {
        match self {
            DensityFamily::Uniform { mass } => *mass,
            DensityFamily::LogGamma { gamma } => (1.0 + pt.u).powf(-gamma),
            DensityFamily::Beta { a, b, log_norm, .. } => {
                (log_norm + pow_term(a - 1.0, -pt.u) + pow_term(b - 1.0, -pt.v)).exp()
            }
            DensityFamily::Table { edges, values } => {
                let i = edges.partition_point(|&e| e <= pt.p).clamp(1, values.len());
                values[i - 1]
            }
        }
    }

    /// Upper bound of the density on the closed interval between `lo` and `hi`.
    pub fn sup_on(&self, lo: &Pt, hi: &Pt) -> f64 {
        match self {
            DensityFamily::Uniform { mass } => *mass,
            DensityFamily::LogGamma { .. } => self.eval(lo).max(self.eval(hi)),
            DensityFamily::Beta { a, b, .. } => {
                let mut s = self.eval(lo).max(self.eval(hi));
                if *a > 1.0 && *b > 1.0 {
                    let mode = (a - 1.0) / (a + b - 2.0);
                    if mode > lo.p && mode < hi.p {
                        s = s.max(self.eval(&Pt::at(mode)));
                    }
                }
                s
            }
            DensityFamily::Table { edges, values } => {
                let first = edges.partition_point(|&e| e <= lo.p).clamp(1, values.len()) - 1;
                let last = edges.partition_point(|&e| e < hi.p).clamp(1, values.len()) - 1;
                values[first..=last].iter().cloned().fold(0.0, f64::max)
            }
        }
    }

    /// `(alpha, A)` with `density(p) <= A p^{alpha-1}` on `(0, edge.p]`, `alpha` in (0, 1].
    pub fn head_bound(&self, edge: &Pt) -> (f64, f64) {
        match self {
            DensityFamily::Uniform { mass } => (1.0, *mass),
            DensityFamily::LogGamma { gamma } if *gamma >= 0.0 => (1.0, self.eval(edge)),
            DensityFamily::LogGamma { gamma } => {
                // (1+u)^g e^{-u/2} is decreasing for u > 2g - 1.
                let g = -gamma;
                let u_star = (2.0 * g - 1.0).max(edge.u);
                (0.5, ((1.0 + u_star).ln() * g - 0.5 * u_star).exp())
            }
            DensityFamily::Beta { a, b, log_norm, .. } => {
                let factor = if *b >= 1.0 { 1.0 } else { edge.q.powf(b - 1.0) };
                (
                    a.min(1.0),
                    log_norm.exp() * factor * if *a > 1.0 { edge.p.powf(a - 1.0) } else { 1.0 },
                )
            }
            DensityFamily::Table { values, .. } => (1.0, values[0]),
        }
    }

    /// `(beta, A)` with `density(p) <= A q^{beta-1}` on `q in (0, edge.q]`.
    pub fn tail_bound(&self, edge: &Pt) -> (f64, f64) {
        match self {
            DensityFamily::Uniform { mass } => (1.0, *mass),
            DensityFamily::LogGamma { .. } => {
                // (1+u)^{-γ} is monotone in u, and u → 0 as q → 0
                (1.0, self.eval(edge).max(1.0))
            }
            DensityFamily::Beta { a, b, log_norm, .. } => {
                let factor = if *a >= 1.0 { 1.0 } else { edge.p.powf(a - 1.0) };
                (
                    b.min(1.0),
                    log_norm.exp() * factor * if *b > 1.0 { edge.q.powf(b - 1.0) } else { 1.0 },
                )
            }
            DensityFamily::Table { values, .. } => (1.0, *values.last().unwrap()),
        }
    }

    /// Interior discontinuities, as `p` values.
    pub fn breakpoints(&self) -> &[f64] {
        match self {
            DensityFamily::Table { edges, .. } => &edges[1..edges.len() - 1],
            _ => &[],
        }
    }
}
