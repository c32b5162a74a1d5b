//! Piecewise dominating envelopes for the density part of Λ, used to sample
//! merger locations exactly by thinning.
//!
//! For a cap `c` (the pair count `C(b,2)` at state `b`, or `∞` for the plain
//! Lévy measure `Λ(dp)/p²`) the envelope is `min(c, 1/p²)·ρ̄(p)`, where `ρ̄` is
//! a bin-wise upper bound of the density. It dominates both `h_b(p)ρ(p)/p²` and
//! `ρ(p)/p²` (when `c = ∞`). Bins are log-spaced in `u = log 1/p` on the left
//! half and in `v = log 1/(1-p)` on the right half; the remaining end pieces
//! near 0 and 1 are covered by power-law bounds.

use rand::Rng;

use crate::measure::{LambdaMeasure, Pt, LN2};

/// Left bins cover `p ∈ [1e-40, 1/2]`, right bins `1 - p ∈ [1e-16, 1/2]`.
const HEAD_U: f64 = 40.0 * std::f64::consts::LN_10;
const TAIL_V: f64 = 16.0 * std::f64::consts::LN_10;
const BINS_PER_HALF: usize = 2048;

#[derive(Debug, Clone)]
enum Shape {
    /// `p ∈ (0, edge]`, density `<= coef·p^{alpha-1}`.
    Head { alpha: f64, coef: f64, edge: Pt },
    /// `p ∈ [lo, hi] ⊂ (0, 1/2]`.
    Left { lo: Pt, hi: Pt },
    /// `p ∈ [lo, hi] ⊂ [1/2, 1)`.
    Right { lo: Pt, hi: Pt },
    /// `1 - p ∈ (0, edge.q]`, density `<= coef·q^{beta-1}`.
    Tail { beta: f64, coef: f64, edge: Pt },
}

#[derive(Debug, Clone)]
struct Bin {
    shape: Shape,
    /// Density bound on the bin (unused for the power-law end bins).
    rho: f64,
    /// Envelope mass per unit cap while `min(c, 1/p²) = c` on the bin.
    flat: f64,
    /// Envelope mass when the `1/p²` branch is used.
    steep: f64,
    p_lo: f64,
    p_hi: f64,
}

impl Bin {
    /// Whether the whole bin sits in the capped regime for switch point `s = 1/√c`.
    fn below(&self, s: f64) -> bool {
        match self.shape {
            Shape::Head { .. } | Shape::Left { .. } => self.p_hi <= s,
            // Right-half bins use a flat bound and switch on their lower edge.
            Shape::Right { .. } | Shape::Tail { .. } => self.p_lo < s,
        }
    }
}

/// Precomputed bins over a sub-range `[lo, hi]` of (0, 1).
#[derive(Debug, Clone)]
pub struct Envelope {
    bins: Vec<Bin>,
    /// `flat_prefix[i] = Σ_{j<i} flat_j`.
    flat_prefix: Vec<f64>,
    /// `steep_suffix[i] = Σ_{j>=i} steep_j`.
    steep_suffix: Vec<f64>,
}

/// The envelope evaluated at one cap value.
#[derive(Debug, Clone, Copy)]
pub struct Level {
    cap: f64,
    s: f64,
    /// Bins `[0, split)` are in the capped regime.
    split: usize,
    /// A left bin straddling `s`, with the masses of its two pieces.
    straddle: Option<(usize, f64, f64)>,
    below_mass: f64,
    pub total: f64,
}

/// A proposed location and the envelope intensity at it.
#[derive(Debug, Clone, Copy)]
pub struct Proposal {
    pub pt: Pt,
    pub envelope: f64,
}

impl Envelope {
    /// Envelope over `p ∈ [lo, hi]`; `None` stands for the endpoint 0 (resp. 1),
    /// which is then covered by a power-law end bin. Returns `None` when Λ has no density.
    pub fn new(m: &LambdaMeasure, lo: Option<Pt>, hi: Option<Pt>) -> Option<Self> {
        if !m.has_density() {
            return None;
        }
        let mut bins = Vec::new();
        let left_du = (HEAD_U - LN2) / BINS_PER_HALF as f64;
        let right_dv = (TAIL_V - LN2) / BINS_PER_HALF as f64;

        // Left half, p increasing (u decreasing).
        let u_top = hi.map_or(LN2, |h| h.u.max(LN2));
        let u_bottom = lo.map_or(HEAD_U, |l| l.u);
        if lo.is_none() {
            let edge = Pt::from_u(u_bottom.max(u_top));
            let (alpha, coef) = m.head_bound(&edge);
            let flat = coef * (alpha * -edge.u).exp() / alpha;
            bins.push(Bin {
                shape: Shape::Head { alpha, coef, edge },
                rho: 0.0,
                flat,
                steep: f64::INFINITY,
                p_lo: 0.0,
                p_hi: edge.p,
            });
        }
        if u_bottom > u_top {
            let count = ((u_bottom - u_top) / left_du).ceil().max(1.0) as usize;
            let step = (u_bottom - u_top) / count as f64;
            for i in (0..count).rev() {
                let hi_pt = Pt::from_u(if i == 0 {
                    u_top
                } else {
                    u_top + i as f64 * step
                });
                let lo_pt = Pt::from_u(if i + 1 == count {
                    u_bottom
                } else {
                    u_top + (i + 1) as f64 * step
                });
                let rho = m.density_sup_on(&lo_pt, &hi_pt);
                bins.push(Bin {
                    shape: Shape::Left {
                        lo: lo_pt,
                        hi: hi_pt,
                    },
                    rho,
                    flat: rho * (hi_pt.p - lo_pt.p),
                    steep: rho * (1.0 / lo_pt.p - 1.0 / hi_pt.p),
                    p_lo: lo_pt.p,
                    p_hi: hi_pt.p,
                });
            }
        }

        // Right half, p increasing (v increasing).
        let v_start = lo.map_or(LN2, |l| l.v.max(LN2));
        let v_end = hi.map_or(TAIL_V, |h| h.v);
        if v_end > v_start {
            let count = ((v_end - v_start) / right_dv).ceil().max(1.0) as usize;
            let step = (v_end - v_start) / count as f64;
            for i in 0..count {
                let lo_pt = Pt::from_v(v_start + i as f64 * step);
                let hi_pt = Pt::from_v(if i + 1 == count {
                    v_end
                } else {
                    v_start + (i + 1) as f64 * step
                });
                let rho = m.density_sup_on(&lo_pt, &hi_pt);
                let dq = lo_pt.q - hi_pt.q;
                bins.push(Bin {
                    shape: Shape::Right {
                        lo: lo_pt,
                        hi: hi_pt,
                    },
                    rho,
                    flat: rho * dq,
                    steep: rho * dq / (lo_pt.p * lo_pt.p),
                    p_lo: lo_pt.p,
                    p_hi: hi_pt.p,
                });
            }
        }
        if hi.is_none() {
            let edge = Pt::from_v(v_end.max(v_start));
            let (beta, coef) = m.tail_bound(&edge);
            let flat = coef * (beta * -edge.v).exp() / beta;
            bins.push(Bin {
                shape: Shape::Tail { beta, coef, edge },
                rho: 0.0,
                flat,
                steep: flat / (edge.p * edge.p),
                p_lo: edge.p,
                p_hi: 1.0,
            });
        }

        let mut flat_prefix = Vec::with_capacity(bins.len() + 1);
        flat_prefix.push(0.0);
        for b in &bins {
            flat_prefix.push(flat_prefix.last().unwrap() + b.flat);
        }
        let mut steep_suffix = vec![0.0; bins.len() + 1];
        for i in (0..bins.len()).rev() {
            steep_suffix[i] = steep_suffix[i + 1] + bins[i].steep;
        }
        Some(Envelope {
            bins,
            flat_prefix,
            steep_suffix,
        })
    }

    /// Envelope for cap `c` (`c = ∞` gives the `1/p²` branch everywhere).
    pub fn level(&self, cap: f64) -> Level {
        let s = if cap.is_finite() {
            1.0 / cap.sqrt()
        } else {
            0.0
        };
        let split = self.bins.partition_point(|b| b.below(s));
        let below_mass = if split == 0 {
            0.0
        } else {
            cap * self.flat_prefix[split]
        };
        let mut straddle = None;
        let mut after = split;
        if let Some(bin) = self.bins.get(split) {
            if let Shape::Left { lo, hi } = &bin.shape {
                if lo.p < s && s < hi.p {
                    let m_lo = bin.rho * cap * (s - lo.p);
                    let m_hi = bin.rho * (1.0 / s - 1.0 / hi.p);
                    straddle = Some((split, m_lo, m_hi));
                    after = split + 1;
                }
            }
        }
        let straddle_mass = straddle.map_or(0.0, |(_, a, b)| a + b);
        let total = below_mass + straddle_mass + self.steep_suffix[after];
        Level {
            cap,
            s,
            split,
            straddle,
            below_mass,
            total,
        }
    }

    /// Draws a location from the normalised envelope at `level`.
    pub fn propose<R: Rng + ?Sized>(&self, level: &Level, rng: &mut R) -> Proposal {
        let x = rng.random::<f64>() * level.total;
        if x < level.below_mass {
            let target = x / level.cap;
            let i = (self.flat_prefix[..=level.split].partition_point(|&c| c <= target) - 1)
                .min(level.split - 1);
            return self.sample_bin(i, true, level, rng);
        }
        let mut x = x - level.below_mass;
        let mut start = level.split;
        if let Some((i, m_lo, m_hi)) = level.straddle {
            if x < m_lo + m_hi {
                let Shape::Left { lo, hi } = self.bins[i].shape else {
                    unreachable!()
                };
                let rho = self.bins[i].rho;
                let u = rng.random::<f64>();
                let pt = if x < m_lo {
                    Pt::from_p(lo.p + u * (level.s - lo.p))
                } else {
                    let inv = 1.0 / level.s - u * (1.0 / level.s - 1.0 / hi.p);
                    Pt::from_p(1.0 / inv)
                };
                let envelope = rho * level.cap.min(1.0 / (pt.p * pt.p));
                return Proposal { pt, envelope };
            }
            x -= m_lo + m_hi;
            start = i + 1;
        }
        // Cumulative steep mass from `start` through bin i is suffix[start] - suffix[i+1].
        let threshold = self.steep_suffix[start] - x;
        let i = (start + self.steep_suffix[start + 1..].partition_point(|&c| c >= threshold))
            .min(self.bins.len() - 1);
        self.sample_bin(i, false, level, rng)
    }

    fn sample_bin<R: Rng + ?Sized>(
        &self,
        i: usize,
        capped: bool,
        level: &Level,
        rng: &mut R,
    ) -> Proposal {
        let bin = &self.bins[i];
        // 1 - U lies in (0, 1], so logarithms below stay finite.
        let w = 1.0 - rng.random::<f64>();
        match &bin.shape {
            Shape::Head { alpha, coef, edge } => {
                let u = edge.u - w.ln() / alpha;
                let pt = Pt::from_u(u);
                Proposal {
                    pt,
                    envelope: level.cap * coef * ((1.0 - alpha) * u).exp(),
                }
            }
            Shape::Left { lo, hi } => {
                if capped {
                    let pt = Pt::from_p(lo.p + w * (hi.p - lo.p));
                    Proposal {
                        pt,
                        envelope: level.cap * bin.rho,
                    }
                } else {
                    let inv = 1.0 / lo.p - w * (1.0 / lo.p - 1.0 / hi.p);
                    let pt = Pt::from_p((1.0 / inv).clamp(lo.p, hi.p));
                    Proposal {
                        pt,
                        envelope: bin.rho / (pt.p * pt.p),
                    }
                }
            }
            Shape::Right { lo, hi } => {
                let pt = Pt::from_q(hi.q + w * (lo.q - hi.q));
                let factor = if capped {
                    level.cap
                } else {
                    1.0 / (lo.p * lo.p)
                };
                Proposal {
                    pt,
                    envelope: factor * bin.rho,
                }
            }
            Shape::Tail { beta, coef, edge } => {
                let v = edge.v - w.ln() / beta;
                let pt = Pt::from_v(v);
                let factor = if capped {
                    level.cap
                } else {
                    1.0 / (edge.p * edge.p)
                };
                Proposal {
                    pt,
                    envelope: factor * coef * ((1.0 - beta) * v).exp(),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binomial::{hit2_rate, pairs};
    use crate::measure::parse_measure;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SPECS: [&str; 5] = [
        "density:uniform:1",
        "density:log_gamma:2",
        "density:log_gamma:-1",
        "density:beta:0.4:0.7:1",
        "density:beta:3:2:1",
    ];

    #[test]
    fn envelope_dominates_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for spec in SPECS {
            let m = parse_measure(spec).unwrap();
            let env = Envelope::new(&m, None, None).unwrap();
            for b in [2u64, 3, 4, 7, 50, 1000, 1_000_000] {
                let level = env.level(pairs(b));
                assert!(level.total.is_finite() && level.total > 0.0);
                for _ in 0..20_000 {
                    let prop = env.propose(&level, &mut rng);
                    let target = m.density_at(&prop.pt) * hit2_rate(b, &prop.pt);
                    assert!(
                        target <= prop.envelope * (1.0 + 1e-9),
                        "{spec} b={b} p={} {target} > {}",
                        prop.pt.p,
                        prop.envelope
                    );
                }
            }
        }
    }

    #[test]
    fn total_mass_bounds_the_target_integral() {
        for spec in SPECS {
            let m = parse_measure(spec).unwrap();
            let env = Envelope::new(&m, None, None).unwrap();
            for b in [2u64, 10, 1000] {
                let target = crate::rates::total_merger_rate(&m, b).unwrap();
                let total = env.level(pairs(b)).total;
                assert!(
                    total >= target * (1.0 - 1e-12) && total < 6.0 * target,
                    "{spec} b={b}: {total} vs {target}"
                );
            }
        }
    }

    #[test]
    fn levy_mode_mean_matches_quadrature() {
        // Acceptance-weighted mean of the jump size log(1/q) reproduces ∫_{p>=p0} log(1/q) Λ(dp)/p².
        let m = parse_measure("density:log_gamma:2").unwrap();
        let p0 = Pt::from_p(1e-3);
        let env = Envelope::new(&m, Some(p0), None).unwrap();
        let level = env.level(f64::INFINITY);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let reps = 400_000;
        let (mut acc, mut sum) = (0usize, 0.0);
        for _ in 0..reps {
            let prop = env.propose(&level, &mut rng);
            let target = m.density_at(&prop.pt) / (prop.pt.p * prop.pt.p);
            assert!(target <= prop.envelope * (1.0 + 1e-12));
            if rng.random::<f64>() * prop.envelope < target {
                acc += 1;
                sum += prop.pt.v;
            }
        }
        let rate = level.total * acc as f64 / reps as f64;
        let mean_rate = level.total * sum / reps as f64;
        let range = crate::measure::Range {
            lo: Some(p0),
            hi: None,
        };
        let cfg = crate::quadrature::QuadConfig::default();
        let want_rate = match m
            .integrate_density(
                &|pt| 1.0 / pt.p,
                &|pt| pt.q / (pt.p * pt.p),
                range,
                &[],
                &cfg,
            )
            .unwrap()
        {
            crate::quadrature::Tail::Finite(e) => e.value,
            _ => unreachable!(),
        };
        let want_mean = match m
            .integrate_density(
                &|pt| pt.phi1(),
                &|pt| pt.v * pt.q / (pt.p * pt.p),
                range,
                &[],
                &cfg,
            )
            .unwrap()
        {
            crate::quadrature::Tail::Finite(e) => e.value,
            _ => unreachable!(),
        };
        assert!(
            (rate / want_rate - 1.0).abs() < 0.01,
            "{rate} vs {want_rate}"
        );
        assert!(
            (mean_rate / want_mean - 1.0).abs() < 0.02,
            "{mean_rate} vs {want_mean}"
        );
    }
}
