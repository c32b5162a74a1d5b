use coalab::binomial::ln_choose;
use coalab::parse_measure;
use coalab::rates::{gamma_b, lambda_bk, merger_size_pmf, total_merger_rate, weighted_rate};
use proptest::prelude::*;

const BUILT_IN: [&str; 7] = [
    "atom:0:1",
    "atom:1:1",
    "atom:0.5:1",
    "density:uniform:1",
    "density:log_gamma:2",
    "density:beta:0.5:1.5:1",
    "atom:0:0.3+atom:0.7:0.2+density:log_gamma:1.5",
];

#[test]
fn total_rate_is_the_sum_of_subset_rates() {
    for spec in BUILT_IN {
        let m = parse_measure(spec).unwrap();
        for b in 2..=12u64 {
            let sum: f64 = (2..=b)
                .map(|k| ln_choose(b, k).exp() * lambda_bk(&m, b, k).unwrap())
                .sum();
            let total = total_merger_rate(&m, b).unwrap();
            assert!(
                (sum / total - 1.0).abs() < 1e-8,
                "{spec} b={b}: {sum} vs {total}"
            );
        }
    }
}

#[test]
fn gamma_dominates_total_rate() {
    for spec in BUILT_IN {
        let m = parse_measure(spec).unwrap();
        for b in 2..=100u64 {
            assert!(
                gamma_b(&m, b).unwrap() >= total_merger_rate(&m, b).unwrap() * (1.0 - 1e-12),
                "{spec} b={b}"
            );
        }
    }
}

#[test]
fn pmf_is_a_probability_vector() {
    for spec in BUILT_IN {
        let m = parse_measure(spec).unwrap();
        for b in [2u64, 3, 17, 250, 3000] {
            let pmf = merger_size_pmf(&m, b).unwrap();
            assert_eq!(pmf.len() as u64, b - 1);
            assert!(pmf.iter().all(|&p| p >= 0.0), "{spec} b={b}");
            assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-9, "{spec} b={b}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rates_decrease_in_b(idx in 0usize..BUILT_IN.len(), b in 2u64..400, frac in 0.0f64..1.0) {
        let m = parse_measure(BUILT_IN[idx]).unwrap();
        let k = 2 + ((b - 2) as f64 * frac) as u64;
        prop_assert!(lambda_bk(&m, b + 1, k).unwrap() <= lambda_bk(&m, b, k).unwrap() * (1.0 + 1e-10));
    }

    #[test]
    fn consistency_recursion(idx in 0usize..BUILT_IN.len(), b in 2u64..200, frac in 0.0f64..1.0) {
        // λ_{b,k} = λ_{b+1,k} + λ_{b+1,k+1}: sampling consistency of the coalescent.
        let m = parse_measure(BUILT_IN[idx]).unwrap();
        let k = 2 + ((b - 2) as f64 * frac) as u64;
        let lhs = lambda_bk(&m, b, k).unwrap();
        let rhs = lambda_bk(&m, b + 1, k).unwrap() + lambda_bk(&m, b + 1, k + 1).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-8 * lhs.max(1e-300), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn weighted_rate_is_binomial_multiple(idx in 0usize..BUILT_IN.len(), b in 2u64..60, frac in 0.0f64..1.0) {
        let m = parse_measure(BUILT_IN[idx]).unwrap();
        let k = 2 + ((b - 2) as f64 * frac) as u64;
        let w = weighted_rate(&m, b, k).unwrap();
        let l = ln_choose(b, k).exp() * lambda_bk(&m, b, k).unwrap();
        prop_assert!((w - l).abs() <= 1e-9 * w.max(1e-300));
    }
}
