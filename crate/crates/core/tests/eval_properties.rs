use graphsim::eval::{evaluate, linear_fit, logistic_fit, pearson, rmse, spearman};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn distinct_pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (6usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(-50.0..50.0f64, n),
            prop::collection::vec(1.0..5.0f64, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn srocc_ignores_increasing_transforms((x, mos) in distinct_pairs(), a in 0.01..10.0f64, b in -5.0..5.0f64) {
        let base = spearman(&x, &mos).value;
        let affine: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let exp: Vec<f64> = x.iter().map(|v| (v / 10.0).exp()).collect();
        prop_assert!((spearman(&affine, &mos).value - base).abs() <= 1e-12);
        prop_assert!((spearman(&exp, &mos).value - base).abs() <= 1e-12);
    }

    #[test]
    fn logistic_mapping_never_loses_to_a_line((x, mos) in distinct_pairs()) {
        let fit = logistic_fit(&x, &mos).unwrap();
        let (slope, intercept) = linear_fit(&x, &mos);
        let line: Vec<f64> = x.iter().map(|v| slope * v + intercept).collect();
        prop_assert!(pearson(&fit.mapped, &mos).value >= pearson(&line, &mos).value - 1e-6);
    }

    #[test]
    fn rmse_is_zero_exactly_on_equality(a in prop::collection::vec(-10.0..10.0f64, 3..40), i in any::<prop::sample::Index>()) {
        prop_assert_eq!(rmse(&a, &a), 0.0);
        let mut b = a.clone();
        let k = i.index(b.len());
        b[k] += 1e-3;
        prop_assert!(rmse(&a, &b) > 0.0);
    }
}

#[test]
fn textbook_ten_sample_oracle() {
    let a = [2.1, 3.4, 1.9, 5.6, 4.4, 3.0, 2.8, 6.1, 4.9, 3.3];
    let b = [1.8, 3.9, 2.2, 5.1, 4.0, 2.5, 3.1, 5.8, 5.2, 2.9];
    // Frozen from an independent two-pass evaluation.
    assert!((pearson(&a, &b).value - 0.961_136_792_558).abs() < 1e-9);
    assert!((spearman(&a, &b).value - 0.939_393_939_394).abs() < 1e-9);
    assert!((rmse(&a, &b) - 0.389_871_773_792).abs() < 1e-9);
}

#[test]
fn shuffled_predictor_is_null() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let mos: Vec<f64> = (0..200).map(|_| rng.random_range(1.0..5.0)).collect();
    let mut below = 0;
    for seed in 0..500u64 {
        let mut shuffled = mos.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        if spearman(&shuffled, &mos).value.abs() < 0.2 {
            below += 1;
        }
    }
    assert!(below as f64 / 500.0 >= 0.99, "{below}/500");
}

#[test]
fn affine_predictor_is_perfect() {
    let mos: Vec<f64> = (0..30).map(|i| 1.0 + (i as f64 * 0.37) % 4.0).collect();
    let pred: Vec<f64> = mos.iter().map(|m| 3.0 - 2.0 * m).collect();
    let r = evaluate(&pred, &mos).unwrap();
    assert!((r.plcc - 1.0).abs() < 1e-6);
    assert!((r.srocc + 1.0).abs() < 1e-12);
    assert!(r.rmse < 1e-6);
}
