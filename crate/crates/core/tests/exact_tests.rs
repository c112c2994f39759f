mod common;

use common::{rel_err, table, to_f64, ExactLaw};
use multifit::exact_tests::{
    fisher_mid_p, fisher_two_sided, normal_approx, normal_approx_with, null_support, LogFactorial,
    TestMethod,
};
use multifit::lattice::{FaceTable, Margins};
use proptest::prelude::*;

#[test]
fn matches_rational_oracle_small_totals() {
    let lf = LogFactorial::new(30);
    for total in 1..=30u64 {
        for r0 in 0..=total {
            for c0 in 0..=total {
                let law = ExactLaw::new(r0, total - r0, c0);
                for a in law.outcomes() {
                    let t = table(r0, total - r0, c0, a);
                    let (p, mid) = law.p_values(a);
                    let got = fisher_two_sided(&t, &lf).value;
                    assert!(rel_err(got, to_f64(&p)) < 1e-10, "{:?}", t.counts);
                    let got = fisher_mid_p(&t, &lf).value;
                    assert!(rel_err(got, to_f64(&mid)) < 1e-10, "{:?}", t.counts);
                }
            }
        }
    }
}

#[test]
fn agrees_with_published_values() {
    let lf = LogFactorial::new(300);
    // Lady tasting tea.
    let p = fisher_two_sided(&FaceTable::from_counts([3, 1, 1, 3]), &lf);
    assert!((p.value - 34.0 / 70.0).abs() < 1e-14);
    let p = fisher_two_sided(&FaceTable::from_counts([98, 52, 52, 98]), &lf);
    assert!(rel_err(p.value, 1.650_492_067_953_94e-7) < 1e-9);
}

#[test]
fn normal_approx_known_value() {
    // z = (a - E a) / sd with hypergeometric variance.
    let t = FaceTable::from_counts([30, 20, 20, 30]);
    let mean = 25.0;
    let var: f64 = 50.0 * 50.0 * 50.0 * 50.0 / (100.0 * 100.0 * 99.0);
    let z = (30.0 - mean) / var.sqrt();
    let expected = erfc_series(z / std::f64::consts::SQRT_2);
    assert!(rel_err(normal_approx(&t).value, expected) < 1e-6);
    assert!(normal_approx_with(&t, true).value > normal_approx(&t).value);
}

/// `1 - erf(x)` from the Taylor series of `erf`, adequate for `|x| < 3`.
fn erfc_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    for k in 1..200 {
        term *= -x * x / k as f64;
        sum += term / (2 * k + 1) as f64;
    }
    1.0 - sum * 2.0 / std::f64::consts::PI.sqrt()
}

#[test]
fn fisher_is_super_uniform_small_grid() {
    let lf = LogFactorial::new(20);
    for total in 2..=20u64 {
        for r0 in 1..total {
            for c0 in 1..total {
                let law = ExactLaw::new(r0, total - r0, c0);
                for alpha in [0.01, 0.05, 0.2] {
                    let mass: f64 = law
                        .outcomes()
                        .filter(|&a| {
                            fisher_two_sided(&table(r0, total - r0, c0, a), &lf).value <= alpha
                        })
                        .map(|a| to_f64(&law.prob(a)))
                        .sum();
                    assert!(mass <= alpha + 1e-12, "{r0} {c0} {total} {alpha}");
                }
            }
        }
    }
}

#[test]
fn support_contains_every_outcome() {
    let lf = LogFactorial::new(60);
    for (r0, r1, c0) in [(10, 12, 9), (30, 30, 30), (5, 40, 20)] {
        let m = Margins {
            row0: r0,
            row1: r1,
            col0: c0,
            col1: r0 + r1 - c0,
        };
        for method in [
            TestMethod::FisherExact,
            TestMethod::FisherMidP,
            TestMethod::NormalApprox,
        ] {
            let s = null_support(m, method, false, &lf).unwrap();
            let law = ExactLaw::new(r0, r1, c0);
            for a in law.outcomes() {
                let t = table(r0, r1, c0, a);
                let p = multifit::exact_tests::p_value(&t, method, false, &lf);
                assert!(s.contains(p.value), "{method:?} {:?}", t.counts);
                // The cdf at an attainable value is the null mass at or below it.
                let mass: f64 = law
                    .outcomes()
                    .filter(|&b| {
                        multifit::exact_tests::p_value(&table(r0, r1, c0, b), method, false, &lf)
                            .value
                            <= p.value * (1.0 + 1e-9)
                    })
                    .map(|b| to_f64(&law.prob(b)))
                    .sum();
                let cdf = s.null_cdf_at(p.value);
                if method == TestMethod::FisherExact {
                    assert!(rel_err(cdf, p.value) < 1e-9);
                    assert!(mass <= cdf * (1.0 + 1e-9));
                } else {
                    assert!(rel_err(cdf, mass) < 1e-9, "{method:?} {cdf} {mass}");
                }
            }
        }
    }
}

fn any_table(max: u32) -> impl Strategy<Value = FaceTable> {
    prop::array::uniform4(0..max).prop_map(FaceTable::from_counts)
}

proptest! {
    #[test]
    fn p_values_are_probabilities(t in any_table(120)) {
        let lf = LogFactorial::new(500);
        for p in [fisher_two_sided(&t, &lf), fisher_mid_p(&t, &lf), normal_approx(&t)] {
            prop_assert!(p.value > 0.0 && p.value <= 1.0);
            prop_assert!((p.ln_value.exp() - p.value).abs() <= 1e-12 * p.value.max(1e-300));
        }
        prop_assert!(fisher_mid_p(&t, &lf).value <= fisher_two_sided(&t, &lf).value);
    }

    #[test]
    fn symmetric_under_transpose_and_swaps(t in any_table(150)) {
        let lf = LogFactorial::new(600);
        let [a, b, c, d] = t.counts;
        let p = fisher_two_sided(&t, &lf).value;
        for other in [t.transposed(), FaceTable::from_counts([c, d, a, b]), FaceTable::from_counts([b, a, d, c])] {
            prop_assert!(rel_err(fisher_two_sided(&other, &lf).value, p) < 1e-10);
            prop_assert!(rel_err(normal_approx(&other).value, normal_approx(&t).value) < 1e-12);
        }
    }

    #[test]
    fn agrees_with_oracle_moderate_totals(r0 in 1u64..90, r1 in 1u64..90, frac in 0.0f64..1.0, pick in 0.0f64..1.0) {
        let total = r0 + r1;
        let c0 = ((total as f64 * frac) as u64).clamp(1, total - 1);
        let law = ExactLaw::new(r0, r1, c0);
        let a = law.lo + ((law.weights.len() as f64 * pick) as u64).min(law.weights.len() as u64 - 1);
        let lf = LogFactorial::new(200);
        let (p, mid) = law.p_values(a);
        let t = table(r0, r1, c0, a);
        prop_assert!(rel_err(fisher_two_sided(&t, &lf).value, to_f64(&p)) < 1e-10);
        prop_assert!(rel_err(fisher_mid_p(&t, &lf).value, to_f64(&mid)) < 1e-10);
    }
}
