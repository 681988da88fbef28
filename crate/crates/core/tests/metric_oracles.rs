mod common;

use common::{clamped_mean_filter, distance_erosion, enumerated_auprc, pairwise_auroc, random_blob, rng};
use fdp_core::evaluation::{auprc, auroc, dice, erode_mask, mean_filter_3d};
use fdp_core::pipeline::AnomalyMap;
use fdp_core::volume::{BrainMask, Dims};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn worked_examples() {
    let pred: Vec<bool> = (0..10).map(|i| i < 5).collect();
    let gt: Vec<bool> = (0..10).map(|i| (2..7).contains(&i)).collect();
    assert_eq!(dice(&pred, &gt).unwrap(), 0.6);
    assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(), 0.75);
    let ap = auprc(&[0.8, 0.4, 0.35, 0.1], &[true, false, true, false]).unwrap();
    assert!((ap - 5.0 / 6.0).abs() < 1e-9);
}

/// Scores drawn from a small set so ties are common.
fn random_case(r: &mut impl Rng) -> (Vec<f64>, Vec<bool>) {
    loop {
        let scores: Vec<f64> = (0..50).map(|_| (r.random_range(0..12) as f64) / 4.0).collect();
        let labels: Vec<bool> = (0..50).map(|_| r.random_bool(0.4)).collect();
        if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
            return (scores, labels);
        }
    }
}

#[test]
fn ranking_metrics_match_brute_force() {
    let mut r = rng(17);
    for _ in 0..100 {
        let (s, l) = random_case(&mut r);
        assert!((auroc(&s, &l).unwrap() - pairwise_auroc(&s, &l)).abs() < 1e-9);
        assert!((auprc(&s, &l).unwrap() - enumerated_auprc(&s, &l)).abs() < 1e-9);
    }
}

#[test]
fn ranking_metrics_match_brute_force_without_ties() {
    let mut r = rng(18);
    for _ in 0..100 {
        let (_, l) = random_case(&mut r);
        let s: Vec<f64> = (0..50).map(|_| r.random::<f64>()).collect();
        assert!((auroc(&s, &l).unwrap() - pairwise_auroc(&s, &l)).abs() < 1e-9);
        assert!((auprc(&s, &l).unwrap() - enumerated_auprc(&s, &l)).abs() < 1e-9);
    }
}

#[test]
fn mean_filter_matches_clamped_oracle() {
    let dims = Dims::new(8, 8, 8);
    let mut r = rng(4);
    for k in [1, 3, 5] {
        for _ in 0..5 {
            // Multiples of 1/16 keep every partial sum exact.
            let values: Vec<f32> = (0..dims.len()).map(|_| r.random_range(0..64) as f32 / 16.0).collect();
            let map = AnomalyMap::new(dims, values.clone()).unwrap();
            let got = mean_filter_3d(&map, k).unwrap();
            assert_eq!(got.scores(), clamped_mean_filter(dims, &values, k).as_slice(), "k = {k}");
        }
    }
}

#[test]
fn erosion_matches_distance_oracle() {
    let dims = Dims::new(9, 12, 10);
    let mut r = rng(6);
    for _ in 0..20 {
        let blob = random_blob(dims, &mut r);
        for iters in 0..4 {
            assert_eq!(erode_mask(&blob, iters), distance_erosion(&blob, iters), "iters = {iters}");
        }
    }
}

#[test]
fn eroded_ball_bounds() {
    let dims = Dims::new(21, 21, 21);
    let ball = |r: f64| BrainMask::from_fn(dims, |z, y, x| {
        let d2 = [z, y, x].iter().map(|&c| (c as f64 - 10.0).powi(2)).sum::<f64>();
        d2 <= r * r
    });
    let eroded = erode_mask(&ball(8.0), 3);
    assert_eq!(eroded, distance_erosion(&ball(8.0), 3));
    assert!(ball(4.0).is_subset_of(&eroded));
    // The cross only shrinks the ball by 3 along the axes. Along the
    // diagonals the city-block ball reaches just 3/sqrt(3), so survivors go
    // past radius 5 and stop short of 7.
    assert!(eroded.get(10, 10, 15) && !eroded.get(10, 10, 16));
    assert!(eroded.is_subset_of(&ball(7.0)));
    assert!(!eroded.is_subset_of(&ball(5.0)));
}

proptest! {
    #[test]
    fn auroc_flips_under_negation(seed in any::<u64>()) {
        let (s, l) = random_case(&mut rng(seed));
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        prop_assert!((auroc(&neg, &l).unwrap() - (1.0 - auroc(&s, &l).unwrap())).abs() < 1e-12);
    }

    #[test]
    fn dice_is_symmetric_and_grows_with_true_positives(a in prop::collection::vec(any::<bool>(), 40), b in prop::collection::vec(any::<bool>(), 40), extra in 0usize..40) {
        prop_assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
        if b[extra] && !a[extra] {
            let mut grown = a.clone();
            grown[extra] = true;
            prop_assert!(dice(&grown, &b).unwrap() >= dice(&a, &b).unwrap());
        }
    }

    #[test]
    fn mean_filter_stays_within_input_bounds(values in prop::collection::vec(0.0f32..10.0, 4 * 5 * 6)) {
        let map = AnomalyMap::new(Dims::new(4, 5, 6), values.clone()).unwrap();
        let out = mean_filter_3d(&map, 3).unwrap();
        let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        prop_assert!(out.scores().iter().all(|&x| x >= lo - 1e-5 && x <= hi + 1e-5));
    }
}
