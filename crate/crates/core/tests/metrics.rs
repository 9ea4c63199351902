//! Statistical and structural properties of the evaluation metrics.

use csagan_core::metrics::{frechet_distance, inception_score, kid, ClassProbSet, FeatureSet};
use csagan_core::rng::{derive, Stream};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(m: usize, d: usize, r: &mut impl Rng) -> FeatureSet {
    let values = (0..m * d).map(|_| Distribution::<f64>::sample(&StandardNormal, r)).collect();
    FeatureSet::new(m, d, values, "test").unwrap()
}

#[test]
fn kid_is_unbiased_for_equal_distributions() {
    let mut r = derive(7, Stream::Test, 1);
    let estimates: Vec<f64> = (0..20).map(|_| kid(&gaussian(500, 8, &mut r), &gaussian(500, 8, &mut r)).unwrap()).collect();
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let sd = (estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    // Negative estimates must occur: a biased estimator would stay positive.
    assert!(estimates.iter().any(|&e| e < 0.0));
    assert!(mean.abs() < 3.0 * sd / n.sqrt(), "mean {mean}, sd {sd}");
}

#[test]
fn kid_detects_a_shift() {
    let mut r = derive(7, Stream::Test, 2);
    let a = gaussian(200, 4, &mut r);
    let mut b = gaussian(200, 4, &mut r);
    b.features.iter_mut().for_each(|v| *v += 1.0);
    assert!(kid(&a, &b).unwrap() > 0.1);
}

fn shifted(f: &FeatureSet, shift: &[f64]) -> FeatureSet {
    let values = f.features.iter().enumerate().map(|(i, v)| v + shift[i % f.d]).collect();
    FeatureSet::new(f.m, f.d, values, "test").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fid_is_symmetric_and_translation_invariant(seed in any::<u64>(), d in 1usize..6, shift in prop::collection::vec(-5.0f64..5.0, 6)) {
        let mut r = derive(seed, Stream::Test, 3);
        let a = gaussian(30, d, &mut r);
        let b = gaussian(25, d, &mut r);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-8 * ab.max(1.0));
        let moved = frechet_distance(&shifted(&a, &shift), &shifted(&b, &shift)).unwrap();
        prop_assert!((ab - moved).abs() < 1e-8 * ab.max(1.0));
        prop_assert!(ab >= 0.0);
    }

    #[test]
    fn fid_of_a_pure_shift_is_its_squared_length(seed in any::<u64>(), shift in prop::collection::vec(-3.0f64..3.0, 4)) {
        let mut r = derive(seed, Stream::Test, 4);
        let a = gaussian(40, 4, &mut r);
        let want: f64 = shift.iter().map(|s| s * s).sum();
        let got = frechet_distance(&a, &shifted(&a, &shift)).unwrap();
        prop_assert!((got - want).abs() < 1e-6 * want.max(1.0));
    }

    #[test]
    fn inception_score_ignores_row_order(seed in any::<u64>(), k in 2usize..8) {
        let mut r = derive(seed, Stream::Test, 5);
        let m = 24;
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            })
            .collect();
        let mut order: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            order.swap(i, r.random_range(0..=i));
        }
        let a = ClassProbSet::new(m, k, rows.concat()).unwrap();
        let b = ClassProbSet::new(m, k, order.iter().flat_map(|&i| rows[i].clone()).collect()).unwrap();
        let (ia, _) = inception_score(&a, 1).unwrap();
        let (ib, _) = inception_score(&b, 1).unwrap();
        prop_assert!((ia - ib).abs() < 1e-12);
        prop_assert!(ia >= 1.0 - 1e-12 && ia <= k as f64 + 1e-9);
    }
}
