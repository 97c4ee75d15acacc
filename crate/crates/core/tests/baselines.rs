use fci_core::baselines::{
    aps_calibrate, aps_score, aps_set, aps_threshold, scaling_set, train_softmax_classifier,
    ApsCalibration, ClassifierConfig, ProbMatrix,
};
use fci_core::datasets::{
    gen_gaussian_classes, reference_spec, split, GaussianClass, SplitFractions, SyntheticSpec,
};
use fci_core::eval::coverage;
use fci_core::pipeline::{fit_baselines, BaselineMethod};
use fci_core::rng;
use proptest::prelude::*;
use rand::Rng;

fn cal(tau: f64) -> ApsCalibration {
    ApsCalibration {
        tau,
        n_cal: 10,
        alpha: 0.05,
    }
}

#[test]
fn hand_examples() {
    assert_eq!(
        scaling_set(&[0.6, 0.3, 0.1], 0.05).unwrap().classes,
        vec![1, 2, 3]
    );
    assert_eq!(
        scaling_set(&[0.97, 0.02, 0.01], 0.05).unwrap().classes,
        vec![1]
    );
    assert_eq!(
        scaling_set(&[0.25; 4], 0.0).unwrap().classes,
        vec![1, 2, 3, 4]
    );

    assert_eq!(aps_threshold(&[0.8, 0.2, 0.6, 0.4], 0.25).unwrap().tau, 0.8);
    assert_eq!(aps_threshold(&[0.3; 7], 0.25).unwrap().tau, 0.3);
    assert_eq!(aps_threshold(&[0.2, 0.4], 0.05).unwrap().tau, 1.0);

    assert_eq!(
        aps_set(&[0.5, 0.3, 0.2], &cal(1.0)).unwrap().classes,
        vec![1, 2, 3]
    );
    assert_eq!(
        aps_set(&[0.5, 0.3, 0.2], &cal(0.75)).unwrap().classes,
        vec![1, 2]
    );
    assert_eq!(
        aps_set(&[0.2, 0.5, 0.3], &cal(1e-12)).unwrap().classes,
        vec![2]
    );

    assert_eq!(aps_score(&[0.5, 0.3, 0.2], 2).unwrap(), 0.8);
    let probs = ProbMatrix::from_rows(&[
        vec![0.2, 0.8],
        vec![0.6, 0.4],
        vec![0.6, 0.4],
        vec![0.4, 0.6],
    ])
    .unwrap();
    // scores 0.8, 0.6, 1.0, 1.0; alpha 0.25 -> index ceil(5 * 0.75) = 4 -> clamp, then largest
    let c = aps_calibrate(&probs, &[2, 1, 2, 1], 0.25).unwrap();
    assert_eq!((c.tau, c.n_cal), (1.0, 4));
    let c = aps_calibrate(&probs, &[2, 1, 2, 1], 0.5).unwrap();
    assert_eq!(c.tau, 1.0);
    let c = aps_calibrate(&probs, &[2, 1, 1, 2], 0.5).unwrap();
    // scores 0.8, 0.6, 0.6, 0.6; index ceil(5 * 0.5) = 3 -> 0.6
    assert_eq!(c.tau, 0.6);
}

#[test]
fn rejects_bad_rows() {
    assert!(scaling_set(&[0.5, 0.4], 0.05).is_err());
    assert!(aps_set(&[1.2, -0.2], &cal(0.5)).is_err());
    assert!(ProbMatrix::from_rows(&[vec![0.5, 0.6]]).is_err());
    assert!(aps_threshold(&[], 0.1).is_err());
}

#[test]
fn classifier_separates_two_gaussians() {
    let spec = SyntheticSpec {
        classes: vec![
            GaussianClass::isotropic(vec![-3.0], 600),
            GaussianClass::isotropic(vec![3.0], 600),
        ],
        seed: 41,
    };
    let data = gen_gaussian_classes(&spec).unwrap();
    let (train, _, test) = split(&data, SplitFractions::new(0.7, 0.0, 0.3).unwrap(), 1).unwrap();
    let cfg = ClassifierConfig::default();
    let clf = train_softmax_classifier(train.features(), &train.class_labels().unwrap(), 2, &cfg)
        .unwrap();
    let probs = clf.predict_proba(test.features()).unwrap();
    let truth = test.class_labels().unwrap();
    let correct = probs
        .iter_rows()
        .zip(&truth)
        .filter(|(row, &y)| (if row[0] >= row[1] { 1 } else { 2 }) == y)
        .count();
    let acc = correct as f64 / truth.len() as f64;
    assert!(acc > 0.95, "accuracy {acc}");
    for row in probs.iter_rows() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let again = train_softmax_classifier(train.features(), &train.class_labels().unwrap(), 2, &cfg)
        .unwrap();
    assert_eq!(again.predict_proba(test.features()).unwrap(), probs);
    assert!(train_softmax_classifier(train.features(), &vec![1; train.len()], 2, &cfg).is_err());
}

#[test]
fn aps_covers_exchangeable_data() {
    let data = gen_gaussian_classes(&reference_spec(2000, 42)).unwrap();
    let f = SplitFractions::new(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0).unwrap();
    let (train, calibration, test) = split(&data, f, 43).unwrap();
    assert_eq!(test.len(), 1998);
    let b = fit_baselines(
        &train,
        &calibration,
        &ClassifierConfig::default(),
        0.05,
        true,
    )
    .unwrap();
    let sets = b.sets(test.features(), BaselineMethod::Aps).unwrap();
    let cov = coverage(&sets, test.labels()).unwrap();
    assert!(cov >= 0.93, "aps coverage {cov}");
    assert!(sets.iter().all(|s| !s.is_empty()));
}

#[test]
fn confident_classifier_threshold_is_top_probability_quantile() {
    let mut r = rng::seeded(44);
    let n = 20_000;
    let tops: Vec<f64> = (0..n).map(|_| r.random_range(0.6..1.0)).collect();
    let probs =
        ProbMatrix::from_rows(&tops.iter().map(|&t| vec![t, 1.0 - t]).collect::<Vec<_>>()).unwrap();
    let c = aps_calibrate(&probs, &vec![1; n], 0.1).unwrap();
    let mut sorted = tops.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = sorted[(0.9 * n as f64) as usize];
    assert!((c.tau - q).abs() < 2e-3, "{} vs {q}", c.tau);
}

fn prob_row() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01..1.0f64, 2..7).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect()
    })
}

proptest! {
    #[test]
    fn scaling_monotone_in_alpha(row in prob_row(), a in 0.0..0.99f64, b in 0.0..0.99f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let wide = scaling_set(&row, lo).unwrap();
        let narrow = scaling_set(&row, hi).unwrap();
        prop_assert!(narrow.classes.iter().all(|c| wide.contains(*c)));
        prop_assert!(!narrow.is_empty());
    }

    #[test]
    fn aps_never_empty_and_grows_with_tau(row in prob_row(), a in 0.0001..1.0f64, b in 0.0001..1.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let small = aps_set(&row, &cal(lo)).unwrap();
        let big = aps_set(&row, &cal(hi)).unwrap();
        prop_assert!(!small.is_empty());
        prop_assert!(small.classes.iter().all(|c| big.contains(*c)));
    }

    #[test]
    fn aps_score_in_unit_interval(row in prob_row(), k in 0usize..6) {
        let label = 1 + k % row.len();
        let s = aps_score(&row, label).unwrap();
        prop_assert!(s > 0.0 && s <= 1.0 + 1e-12);
        prop_assert!(aps_set(&row, &cal(s.min(1.0))).unwrap().contains(label));
    }
}
