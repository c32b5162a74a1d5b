//! Binomial hit counts of a `p`-merger: `K ~ Binomial(b, p)`, with stable
//! evaluation of `P(K >= 2)` and exact sampling of `K | K >= 2`.

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::measure::Pt;

/// Below this `b·p` the tail `P(K >= 2)` is summed term by term.
const SERIES_REGIME: f64 = 0.5;

/// `log C(n, k)`.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let k = k.min(n - k);
    if k < 32 {
        (0..k).map(|i| ((n - i) as f64 / (i + 1) as f64).ln()).sum()
    } else {
        statrs::function::gamma::ln_gamma(n as f64 + 1.0)
            - statrs::function::gamma::ln_gamma(k as f64 + 1.0)
            - statrs::function::gamma::ln_gamma((n - k) as f64 + 1.0)
    }
}

/// `b(b-1)/2` as a float.
#[inline]
pub fn pairs(b: u64) -> f64 {
    let b = b as f64;
    0.5 * b * (b - 1.0)
}

/// Iterator over `(k, C(b,k) p^k q^{b-k})` for `k = 2, 3, ...`, computed by the ratio recursion.
fn tail_terms(b: u64, pt: &Pt) -> impl Iterator<Item = (u64, f64)> {
    scaled_tail_terms(b, pt, pt.p * pt.p)
}

/// As [`tail_terms`] with the common factor `p²` replaced by `scale` (avoids underflow of `p²`).
fn scaled_tail_terms(b: u64, pt: &Pt, scale: f64) -> impl Iterator<Item = (u64, f64)> {
    let bf = b as f64;
    let first = if b < 2 {
        0.0
    } else {
        pairs(b) * scale * (-(bf - 2.0) * pt.v).exp()
    };
    let odds = pt.p / pt.q;
    let mut k = 2u64;
    let mut t = first;
    std::iter::from_fn(move || {
        if k > b || t == 0.0 {
            return None;
        }
        let out = (k, t);
        t *= (b - k) as f64 / (k + 1) as f64 * odds;
        k += 1;
        Some(out)
    })
}

/// `h_b(p) = P(Binomial(b,p) >= 2) = 1 - q^b - b p q^{b-1}`.
pub fn hit2_prob(b: u64, pt: &Pt) -> f64 {
    if b < 2 || pt.p == 0.0 {
        return 0.0;
    }
    let bf = b as f64;
    if bf * pt.p < SERIES_REGIME {
        sum_series(tail_terms(b, pt).map(|(_, t)| t))
    } else {
        let qb1 = (-(bf - 1.0) * pt.v).exp();
        (1.0 - qb1 * pt.q - bf * pt.p * qb1).max(0.0)
    }
}

/// `h_b(p) / p²`, extended by `C(b,2)` at `p = 0`.
pub fn hit2_rate(b: u64, pt: &Pt) -> f64 {
    if pt.p == 0.0 {
        pairs(b)
    } else if (b as f64) * pt.p < SERIES_REGIME {
        sum_series(scaled_tail_terms(b, pt, 1.0).map(|(_, t)| t))
    } else {
        hit2_prob(b, pt) / (pt.p * pt.p)
    }
}

/// `E[(K-1)^+] = b p - 1 + q^b`, the expected block loss of a `p`-merger.
pub fn block_loss(b: u64, pt: &Pt) -> f64 {
    if b < 2 || pt.p == 0.0 {
        return 0.0;
    }
    let bf = b as f64;
    if bf * pt.p < SERIES_REGIME {
        sum_series(tail_terms(b, pt).map(|(k, t)| (k - 1) as f64 * t))
    } else {
        (bf * pt.p - 1.0 + (-bf * pt.v).exp()).max(0.0)
    }
}

/// `(b p - 1 + q^b) / p²`, extended by `C(b,2)` at `p = 0`.
pub fn block_loss_rate(b: u64, pt: &Pt) -> f64 {
    if pt.p == 0.0 {
        pairs(b)
    } else if (b as f64) * pt.p < SERIES_REGIME {
        sum_series(scaled_tail_terms(b, pt, 1.0).map(|(k, t)| (k - 1) as f64 * t))
    } else {
        block_loss(b, pt) / (pt.p * pt.p)
    }
}

fn sum_series(terms: impl Iterator<Item = f64>) -> f64 {
    let mut s = 0.0;
    for t in terms {
        s += t;
        if t <= s * 1e-17 {
            break;
        }
    }
    s
}

/// Samples `K ~ Binomial(b, p)` conditioned on `K >= 2`. Requires `b >= 2`, `p > 0`.
pub fn sample_hits_at_least_two<R: Rng + ?Sized>(b: u64, pt: &Pt, rng: &mut R) -> u64 {
    debug_assert!(b >= 2 && pt.p > 0.0);
    let bf = b as f64;
    if bf * pt.p < 1.0 {
        // Sequential inversion; the conditional law has geometric-type decay.
        let total = hit2_prob(b, pt);
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut last = 2;
        for (k, t) in tail_terms(b, pt) {
            acc += t;
            last = k;
            if acc >= target {
                return k;
            }
        }
        return last;
    }
    if pt.p <= 0.5 {
        let dist = Binomial::new(b, pt.p).expect("valid binomial");
        loop {
            let k = dist.sample(rng);
            if k >= 2 {
                return k;
            }
        }
    }
    // Count the misses instead, so that q stays accurate when p is close to 1.
    let dist = Binomial::new(b, pt.q).expect("valid binomial");
    loop {
        let k = b - dist.sample(rng);
        if k >= 2 {
            return k;
        }
    }
}

/// Unconditioned `K ~ Binomial(b, p)`.
pub fn sample_hits<R: Rng + ?Sized>(b: u64, pt: &Pt, rng: &mut R) -> u64 {
    if pt.p <= 0.5 {
        Binomial::new(b, pt.p).expect("valid binomial").sample(rng)
    } else {
        b - Binomial::new(b, pt.q).expect("valid binomial").sample(rng)
    }
}
