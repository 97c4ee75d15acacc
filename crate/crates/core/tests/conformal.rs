use fci_core::conformal::{
    build_pool, is_outlier, nonconformity_scores, p_value, p_values_all, p_values_batch,
    predictive_set, PValueMode, PValueVector, ScorePool,
};
use fci_core::flow::ClassFlowModel;
use fci_core::{rng, Mlp, Tensor};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

fn shift_encoder(class: usize, mean: f64) -> ClassFlowModel {
    let enc = Mlp::affine(
        Tensor::from_rows(&[vec![1.0]]).unwrap(),
        Tensor::from_rows(&[vec![-mean]]).unwrap(),
    )
    .unwrap();
    ClassFlowModel::with_fixed_encoder(class, enc).unwrap()
}

fn normals(r: &mut rng::Rng, n: usize, mean: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let x: f64 = StandardNormal.sample(r);
            x + mean
        })
        .collect()
}

fn column(values: &[f64]) -> Tensor {
    Tensor::from_vec(vec![values.len(), 1], values.to_vec()).unwrap()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn gaussian_oracle_rank_agreement() {
    let means = [0.0, 3.0];
    let mut r = rng::seeded(21);
    let models: Vec<ClassFlowModel> = means
        .iter()
        .enumerate()
        .map(|(i, &m)| shift_encoder(i + 1, m))
        .collect();
    let pools: Vec<ScorePool> = models
        .iter()
        .zip(means)
        .map(|(model, m)| build_pool(model, &column(&normals(&mut r, 10_000, m))).unwrap())
        .collect();
    let test: Vec<f64> = (0..500)
        .map(|i| normals(&mut r, 1, means[i % 2])[0])
        .collect();
    let pvs = p_values_batch(&models, &pools, &column(&test), PValueMode::Smoothed).unwrap();
    let std = Normal::new(0.0, 1.0).unwrap();
    for (c, &m) in means.iter().enumerate() {
        let empirical: Vec<f64> = pvs.iter().map(|p| p.values()[c]).collect();
        let analytic: Vec<f64> = test
            .iter()
            .map(|x| 2.0 * (1.0 - std.cdf((x - m).abs())))
            .collect();
        let rho = spearman(&empirical, &analytic);
        assert!(rho > 0.99, "class {}: rho {rho}", c + 1);
    }
}

#[test]
fn super_uniform_under_exchangeability() {
    let draws = 100_000;
    let n = 19;
    let mut r = rng::seeded(22);
    let mut ps = Vec::with_capacity(draws);
    for _ in 0..draws {
        let pool = ScorePool::new(1, (0..n).map(|_| r.random::<f64>()).collect()).unwrap();
        ps.push(p_value(&pool, r.random::<f64>(), PValueMode::Smoothed));
    }
    for k in 1..=99 {
        let alpha = k as f64 / 100.0;
        let rate = ps.iter().filter(|&&p| p <= alpha).count() as f64 / draws as f64;
        let se = (alpha * (1.0 - alpha) / draws as f64).sqrt();
        assert!(rate <= alpha + 3.0 * se, "alpha {alpha}: rate {rate}");
    }
}

#[test]
fn hand_counts() {
    let pool = ScorePool::new(1, vec![4.0, 2.0, 1.0, 3.0]).unwrap();
    assert_eq!(p_value(&pool, 2.5, PValueMode::Smoothed), 0.6);
    assert_eq!(p_value(&pool, 100.0, PValueMode::Smoothed), 0.2);
    assert_eq!(p_value(&pool, 100.0, PValueMode::PaperLiteral), 1.0);
    assert_eq!(p_value(&pool, 0.5, PValueMode::Smoothed), 1.0);
    // ties count as at least
    assert_eq!(p_value(&pool, 3.0, PValueMode::Smoothed), 0.6);

    let set = predictive_set(&PValueVector(vec![0.9, 0.03, 0.2]), 0.05).unwrap();
    assert_eq!(set.classes, vec![1, 3]);
    let empty = predictive_set(&PValueVector(vec![0.01, 0.03, 0.02]), 0.05).unwrap();
    assert!(is_outlier(&empty));
    let full = predictive_set(&PValueVector(vec![0.001, 0.2, 1.0 / 2001.0]), 1e-9).unwrap();
    assert_eq!(full.classes, vec![1, 2, 3]);
    assert!(!is_outlier(&full));
}

#[test]
fn identity_pool_hand_example() {
    let id = ClassFlowModel::with_fixed_encoder(1, Mlp::identity(2).unwrap()).unwrap();
    let x = Tensor::from_rows(&[
        vec![0.0, 0.0],
        vec![3.0, 4.0],
        vec![1.0, 1.0],
        vec![1.0, 1.0],
    ])
    .unwrap();
    assert_eq!(
        build_pool(&id, &x).unwrap().scores(),
        &[0.0, 2.0, 2.0, 25.0]
    );
    assert_eq!(
        nonconformity_scores(&id, &x).unwrap(),
        vec![0.0, 25.0, 2.0, 2.0]
    );
}

#[test]
fn single_class_reduces_to_p_value() {
    let model = shift_encoder(1, 1.0);
    let pool = ScorePool::new(1, vec![0.5, 1.0, 4.0]).unwrap();
    let pv = p_values_all(
        std::slice::from_ref(&model),
        std::slice::from_ref(&pool),
        &[2.0],
        PValueMode::Smoothed,
    )
    .unwrap();
    assert_eq!(pv.values(), &[p_value(&pool, 1.0, PValueMode::Smoothed)]);
    assert!(p_values_all(&[model], &[], &[2.0], PValueMode::Smoothed).is_err());
}

fn pool_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..50.0f64, 1..40)
}

proptest! {
    #[test]
    fn smoothed_is_non_increasing(scores in pool_strategy(), a in 0.0..60.0f64, b in 0.0..60.0f64) {
        let pool = ScorePool::new(1, scores).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(p_value(&pool, lo, PValueMode::Smoothed) >= p_value(&pool, hi, PValueMode::Smoothed));
    }

    #[test]
    fn p_values_in_unit_interval(scores in pool_strategy(), t in 0.0..60.0f64) {
        let pool = ScorePool::new(1, scores).unwrap();
        let p = p_value(&pool, t, PValueMode::Smoothed);
        prop_assert!(p > 0.0 && p <= 1.0);
        let q = p_value(&pool, t, PValueMode::PaperLiteral);
        prop_assert!((0.0..=1.0).contains(&q));
    }

    #[test]
    fn set_membership_iff_threshold(pv in prop::collection::vec(0.0001..1.0f64, 1..8), alpha in 0.001..0.999f64) {
        let set = predictive_set(&PValueVector(pv.clone()), alpha).unwrap();
        for (i, p) in pv.iter().enumerate() {
            prop_assert_eq!(set.contains(i + 1), *p >= alpha);
        }
        prop_assert_eq!(is_outlier(&set), pv.iter().all(|&p| p < alpha));
    }

    #[test]
    fn token_round_trip(pv in prop::collection::vec(0.0001..1.0f64, 1..8), alpha in 0.001..0.999f64) {
        let set = predictive_set(&PValueVector(pv), alpha).unwrap();
        let back = fci_core::conformal::PredictiveSet::from_token(&set.to_token(), alpha).unwrap();
        prop_assert_eq!(back, set);
    }
}
