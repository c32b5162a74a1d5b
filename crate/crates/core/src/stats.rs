//! Sample summaries, the one-sample KS test against a centred normal, and Q-Q tables.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Percentile levels reported for every sample.
pub const PERCENTILES: [f64; 7] = [0.05, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99];
/// Terms of the Kolmogorov series.
const KOLMOGOROV_TERMS: i32 = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub std_error: f64,
    pub min: f64,
    pub max: f64,
    /// `(level, value)` for each entry of [`PERCENTILES`].
    pub percentiles: Vec<(f64, f64)>,
}

impl Summary {
    pub fn new(xs: &[f64]) -> Result<Self> {
        if xs.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 samples, got {}",
                xs.len()
            )));
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let variance = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let percentiles = PERCENTILES
            .iter()
            .map(|&q| (q, quantile_sorted(&sorted, q)))
            .collect();
        Ok(Summary {
            count: xs.len(),
            mean,
            variance,
            std_error: (variance / n).sqrt(),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            percentiles,
        })
    }

    pub fn percentile(&self, q: f64) -> Option<f64> {
        self.percentiles.iter().find(|p| p.0 == q).map(|p| p.1)
    }

    /// Whether `target` lies within `k` standard errors of the mean.
    pub fn agrees_with(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_error
    }
}

/// Linear interpolation between order statistics (Hyndman–Fan type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub d: f64,
    pub p_value: f64,
}

/// `Q(λ) = 2 Σ_{j>=1} (-1)^{j-1} e^{-2 j² λ²}`, the limiting tail of `√n·D`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let s: f64 = (1..=KOLMOGOROV_TERMS)
        .map(|j| {
            let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
            sign * (-2.0 * (j * j) as f64 * lambda * lambda).exp()
        })
        .sum();
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov test against `N(0, variance)`.
pub fn ks_statistic(samples: &[f64], variance: f64) -> Result<KsResult> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("KS test on an empty sample".into()));
    }
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "variance must be positive and finite, got {variance}"
        )));
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("valid normal");
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let d = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = normal.cdf(x);
            (c - i as f64 / n).max((i + 1) as f64 / n - c)
        })
        .fold(0.0, f64::max);
    Ok(KsResult {
        d,
        p_value: kolmogorov_sf(n.sqrt() * d),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QqRow {
    pub prob: f64,
    pub theoretical: f64,
    pub empirical: f64,
}

/// Normal Q-Q table at `points` equally spaced probabilities `(i - 1/2)/points`.
pub fn qq_table(samples: &[f64], variance: f64, points: usize) -> Result<Vec<QqRow>> {
    if samples.is_empty() || points == 0 {
        return Err(Error::InvalidArgument(
            "Q-Q table needs samples and points".into(),
        ));
    }
    let normal = Normal::new(0.0, variance.sqrt())
        .map_err(|_| Error::InvalidArgument(format!("bad variance {variance}")))?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((0..points)
        .map(|i| {
            let prob = (i as f64 + 0.5) / points as f64;
            QqRow {
                prob,
                theoretical: normal.inverse_cdf(prob),
                empirical: quantile_sorted(&sorted, prob),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal as NormalDist};

    #[test]
    fn summary_of_small_sample() {
        let s = Summary::new(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert!((s.variance - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.percentile(0.5), Some(2.5));
        assert_eq!((s.min, s.max), (1.0, 4.0));
        assert!(Summary::new(&[1.0]).is_err());
    }

    #[test]
    fn kolmogorov_tail_values() {
        // Reference values of the Kolmogorov distribution.
        assert!((kolmogorov_sf(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_sf(1.628) - 0.01).abs() < 1e-3);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }

    #[test]
    fn ks_edge_cases() {
        assert!(ks_statistic(&[], 1.0).is_err());
        assert!(ks_statistic(&[0.0], 0.0).is_err());
        let constant = vec![3.0; 50];
        assert!(ks_statistic(&constant, 1.0).unwrap().d >= 0.5);
    }

    #[test]
    fn ks_self_test_on_normal_samples() {
        let v: f64 = 0.7;
        let normal = NormalDist::new(0.0, v.sqrt()).unwrap();
        let passed = (0..100)
            .filter(|&t| {
                let mut rng = stream(17, Domain::SelfTest, 0, t);
                let xs: Vec<f64> = (0..10_000).map(|_| normal.sample(&mut rng)).collect();
                ks_statistic(&xs, v).unwrap().p_value > 0.01
            })
            .count();
        assert!(passed >= 95, "{passed}");
    }

    #[test]
    fn qq_table_is_monotone() {
        let xs: Vec<f64> = (0..200).map(|i| (i as f64 - 99.5) / 50.0).collect();
        let t = qq_table(&xs, 1.0, 9).unwrap();
        assert_eq!(t[4].theoretical, 0.0);
        assert!(t
            .windows(2)
            .all(|w| w[0].theoretical < w[1].theoretical && w[0].empirical <= w[1].empirical));
    }

    proptest! {
        #[test]
        fn quantiles_are_bracketed(mut xs in prop::collection::vec(-1e6f64..1e6, 2..200), q in 0.0f64..=1.0) {
            xs.sort_by(f64::total_cmp);
            let v = quantile_sorted(&xs, q);
            prop_assert!(v >= xs[0] && v <= xs[xs.len() - 1]);
        }

        #[test]
        fn ks_distance_is_a_probability_gap(xs in prop::collection::vec(-5f64..5.0, 1..100), v in 0.1f64..10.0) {
            let r = ks_statistic(&xs, v).unwrap();
            prop_assert!(r.d > 0.0 && r.d <= 1.0);
            prop_assert!((0.0..=1.0).contains(&r.p_value));
        }
    }
}
