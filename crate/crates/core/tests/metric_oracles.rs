mod common;

use proptest::prelude::*;

use common::{max_fbeta_exhaustive, s_measure_oracle, weighted_fbeta_oracle};
use s2s_core::metrics::{evaluate_pairs, mae, max_fbeta, s_measure, weighted_fbeta, MetricConfig, Pair};

/// Prediction and a mask with at least one positive and one negative pixel.
fn map_and_mask(h: usize, w: usize) -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (prop::collection::vec(0.0..=1.0f64, h * w), prop::collection::vec(0u8..2, h * w))
        .prop_filter("mixed mask", |(_, g)| g.contains(&0) && g.contains(&1))
}

fn on_grid(pred: &[f64]) -> Vec<f64> {
    pred.iter().map(|v| (v * 255.0).round() / 255.0).collect()
}

fn cfg() -> MetricConfig {
    MetricConfig::default()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn max_fbeta_equals_exhaustive_on_grid((pred, gt) in map_and_mask(8, 8)) {
        let q = on_grid(&pred);
        let (ours, _) = max_fbeta(Pair::new(&q, &gt, 8, 8).unwrap(), &cfg()).unwrap();
        prop_assert_eq!(ours, max_fbeta_exhaustive(&q, &gt, 0.3));
    }

    #[test]
    fn max_fbeta_off_grid_is_the_ceiling_quantization((pred, gt) in map_and_mask(8, 8)) {
        let (ours, _) = max_fbeta(Pair::new(&pred, &gt, 8, 8).unwrap(), &cfg()).unwrap();
        let up: Vec<f64> = pred.iter().map(|v| (v * 255.0).ceil() / 255.0).collect();
        prop_assert!((ours - max_fbeta_exhaustive(&up, &gt, 0.3)).abs() <= 1e-12);
        prop_assert!(ours <= max_fbeta_exhaustive(&pred, &gt, 0.3) + 1e-12);
    }

    #[test]
    fn weighted_fbeta_matches_oracle((pred, gt) in map_and_mask(9, 7), beta_sq in 0.1..2.0f64) {
        let c = MetricConfig { beta_sq, ..cfg() };
        let ours = weighted_fbeta(Pair::new(&pred, &gt, 9, 7).unwrap(), &c).unwrap();
        let want = weighted_fbeta_oracle(&pred, &gt, 9, 7, beta_sq);
        prop_assert!((ours - want).abs() <= 1e-6, "{} vs {}", ours, want);
    }

    #[test]
    fn s_measure_matches_oracle(
        (pred, gt, h, w) in (3usize..12, 3usize..12).prop_flat_map(|(h, w)| {
            (prop::collection::vec(0.0..=1.0f64, h * w), prop::collection::vec(0u8..2, h * w), Just(h), Just(w))
        }),
        alpha in 0.0..=1.0f64,
    ) {
        let c = MetricConfig { s_alpha: alpha, ..cfg() };
        let ours = s_measure(Pair::new(&pred, &gt, h, w).unwrap(), &c);
        let want = s_measure_oracle(&pred, &gt, h, w, alpha);
        prop_assert!((ours - want).abs() <= 1e-6, "{} vs {}", ours, want);
    }

    #[test]
    fn scores_lie_in_the_unit_interval((pred, gt) in map_and_mask(6, 10)) {
        let p = Pair::new(&pred, &gt, 6, 10).unwrap();
        for v in [mae(p), max_fbeta(p, &cfg()).unwrap().0, weighted_fbeta(p, &cfg()).unwrap(), s_measure(p, &cfg())] {
            prop_assert!((0.0..=1.0).contains(&v), "{}", v);
        }
    }

    #[test]
    fn mae_is_symmetric_under_inversion((pred, gt) in map_and_mask(5, 5)) {
        let inv_p: Vec<f64> = pred.iter().map(|v| 1.0 - v).collect();
        let inv_g: Vec<u8> = gt.iter().map(|g| 1 - g).collect();
        let a = mae(Pair::new(&pred, &gt, 5, 5).unwrap());
        let b = mae(Pair::new(&inv_p, &inv_g, 5, 5).unwrap());
        prop_assert!((a - b).abs() <= 1e-15);
    }

    #[test]
    fn dataset_scores_ignore_image_order(
        maps in prop::collection::vec(map_and_mask(4, 4), 2..6),
        rot in 0usize..6,
    ) {
        let pairs: Vec<Pair> = maps.iter().map(|(p, g)| Pair::new(p, g, 4, 4).unwrap()).collect();
        let mut shuffled = pairs.clone();
        shuffled.rotate_left(rot % pairs.len());
        shuffled.reverse();
        let (a, _) = evaluate_pairs(&pairs, &cfg()).unwrap();
        let (b, _) = evaluate_pairs(&shuffled, &cfg()).unwrap();
        prop_assert!((a.mae - b.mae).abs() <= 1e-12);
        prop_assert!((a.max_fbeta - b.max_fbeta).abs() <= 1e-12);
        prop_assert!((a.weighted_fbeta - b.weighted_fbeta).abs() <= 1e-12);
        prop_assert!((a.s_measure - b.s_measure).abs() <= 1e-12);
    }
}

#[test]
fn hand_computed_mae() {
    let gt = [1, 0, 0, 1];
    let cases: [([f64; 4], f64); 4] = [
        ([1.0, 0.0, 0.0, 1.0], 0.0),
        ([0.0, 1.0, 1.0, 0.0], 1.0),
        ([0.5; 4], 0.5),
        ([0.75, 0.25, 0.0, 1.0], 0.125),
    ];
    for (pred, want) in cases {
        assert_eq!(mae(Pair::new(&pred, &gt, 2, 2).unwrap()), want);
    }
}
