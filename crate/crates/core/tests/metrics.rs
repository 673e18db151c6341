use galnet::data::ClassMask;
use galnet::metrics::{confusion, metrics_from_counts, ConfusionCounts, MetricReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn confusion_matches_brute_force_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..1000 {
        let density = rng.gen_range(0.0..1.0);
        let mut draw = || -> Vec<u8> { (0..256).map(|_| u8::from(rng.gen_bool(density))).collect() };
        let (pred, label) = (draw(), draw());
        let mut want = [0u64; 4];
        for i in 0..256 {
            let slot = match (pred[i], label[i]) {
                (1, 1) => 0,
                (1, 0) => 1,
                (0, 1) => 2,
                _ => 3,
            };
            want[slot] += 1;
        }
        let got = confusion(&ClassMask::new(16, 16, pred).unwrap(), &ClassMask::new(16, 16, label).unwrap()).unwrap();
        assert_eq!(got, ConfusionCounts::new(want[0], want[1], want[2], want[3]));
        assert_eq!(got.total(), 256);
    }
}

#[test]
fn hand_worked_row() {
    let m = metrics_from_counts(&ConfusionCounts::new(2, 1, 2, 11)).unwrap();
    let want = [2.0 / 3.0, 1.0 / 2.0, 13.0 / 16.0, 4.0 / 7.0, 2.0 / 5.0];
    for (got, want) in m.values().iter().zip(want) {
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }
}

#[test]
fn all_background_prediction_on_a_pothole_scores_zero() {
    let pred = ClassMask::zeros(4, 4);
    let label = ClassMask::new(4, 4, (0..16).map(|i| u8::from(i < 4)).collect()).unwrap();
    let m = metrics_from_counts(&confusion(&pred, &label).unwrap()).unwrap();
    assert_eq!((m.pre, m.rec, m.fsc, m.iou), (0.0, 0.0, 0.0, 0.0));
    assert_eq!(m.acc, 0.75);
}

#[test]
fn mismatched_masks_are_rejected() {
    assert!(confusion(&ClassMask::zeros(4, 4), &ClassMask::zeros(4, 5)).is_err());
}

#[test]
fn report_means_are_arithmetic_over_folds() {
    let rows = vec![
        metrics_from_counts(&ConfusionCounts::new(2, 1, 2, 11)).unwrap(),
        metrics_from_counts(&ConfusionCounts::new(5, 0, 0, 3)).unwrap(),
        metrics_from_counts(&ConfusionCounts::new(0, 4, 1, 9)).unwrap(),
    ];
    let r = MetricReport::from_rows(rows.clone()).unwrap();
    for j in 0..5 {
        let mean = rows.iter().map(|m| m.values()[j]).sum::<f64>() / 3.0;
        assert!((r.mean.values()[j] - mean).abs() < 1e-15);
    }
    // fold 2 is perfect, fold 3 has no true positives
    assert_eq!(r.rows[1].iou, 1.0);
    assert_eq!(r.rows[2].iou, 0.0);
}
