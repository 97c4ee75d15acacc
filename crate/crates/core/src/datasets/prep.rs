use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Label, LabeledDataset};
use crate::autodiff::Tensor;
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub calibration: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, calibration: f64, test: f64) -> Result<Self> {
        let f = Self {
            train,
            calibration,
            test,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.calibration, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config(format!(
                "split fractions must lie in [0, 1], got {parts:?}"
            )));
        }
        let total: f64 = parts.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions sum to {total}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Stratified three-way split. Every class is shuffled and cut separately,
/// so per-class shares are within one row of the requested fractions.
/// Outlier rows always land in the test split.
pub fn split(
    data: &LabeledDataset,
    fractions: SplitFractions,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    fractions.validate()?;
    let mut rng = rng::seeded(seed);
    let (mut train, mut cal, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for class in 1..=data.n_classes() {
        let mut idx = data.indices_of(Label::Class(class));
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        let n_train = (fractions.train * n).round() as usize;
        let n_cal = ((fractions.calibration * n).round() as usize).min(idx.len() - n_train);
        train.extend_from_slice(&idx[..n_train]);
        cal.extend_from_slice(&idx[n_train..n_train + n_cal]);
        test.extend_from_slice(&idx[n_train + n_cal..]);
    }
    test.extend(data.indices_of(Label::Outlier));
    for part in [&mut train, &mut cal, &mut test] {
        part.sort_unstable();
    }
    Ok((
        data.select(&train)?,
        data.select(&cal)?,
        data.select(&test)?,
    ))
}

/// Keep at most `max` rows of each class, chosen at random; outliers are kept.
pub fn subsample_per_class(data: &LabeledDataset, max: usize, seed: u64) -> Result<LabeledDataset> {
    let mut rng = rng::seeded(seed);
    let mut keep = data.indices_of(Label::Outlier);
    for class in 1..=data.n_classes() {
        let mut idx = data.indices_of(Label::Class(class));
        idx.shuffle(&mut rng);
        idx.truncate(max);
        keep.extend(idx);
    }
    keep.sort_unstable();
    data.select(&keep)
}

/// Remove one class, returning the rest (classes above it shift down by one)
/// and the removed rows for use as outliers.
pub fn hold_out_class(data: &LabeledDataset, class: usize) -> Result<(LabeledDataset, Tensor)> {
    if class == 0 || class > data.n_classes() {
        return Err(Error::Config(format!(
            "class {class} outside 1..={}",
            data.n_classes()
        )));
    }
    let held = data.class_features(class)?;
    let keep: Vec<usize> = (0..data.len())
        .filter(|&i| data.labels()[i] != Label::Class(class))
        .collect();
    let rest = data.select(&keep)?;
    let labels = rest
        .labels()
        .iter()
        .map(|l| match *l {
            Label::Class(c) if c > class => Label::Class(c - 1),
            other => other,
        })
        .collect();
    let relabelled = LabeledDataset::new(
        rest.features().clone(),
        labels,
        rest.sources().to_vec(),
        data.n_classes() - 1,
    )?;
    Ok((relabelled, held))
}

/// Per-feature affine standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Population mean and standard deviation per column. Constant columns
    /// get unit scale.
    pub fn fit(x: &Tensor) -> Result<Self> {
        let n = x.rows();
        if n == 0 {
            return Err(Error::InsufficientData(
                "cannot fit a normalizer on zero rows".into(),
            ));
        }
        let p = x.cols();
        let mut mean = vec![0.0; p];
        for row in x.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; p];
        for row in x.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let std = var
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    log::warn!("feature {} has zero variance; scaling by 1", j + 1);
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(Error::Shape(format!(
                "normalizer fitted on {} features, got {}",
                self.dim(),
                x.cols()
            )));
        }
        Ok(())
    }

    pub fn transform(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let mut out = x.clone();
        let p = self.dim();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v = (*v - self.mean[k % p]) / self.std[k % p];
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let mut out = x.clone();
        let p = self.dim();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v * self.std[k % p] + self.mean[k % p];
        }
        Ok(out)
    }

    pub fn apply(&self, data: &LabeledDataset) -> Result<LabeledDataset> {
        data.with_features(self.transform(data.features())?)
    }
}

/// Standardize with statistics of `data` itself; reuse the returned
/// transform on calibration and test splits.
pub fn normalize(data: &LabeledDataset) -> Result<(LabeledDataset, Normalizer)> {
    let norm = Normalizer::fit(data.features())?;
    Ok((norm.apply(data)?, norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{gen_gaussian_classes, reference_spec, Source};

    fn fr(a: f64, b: f64, c: f64) -> SplitFractions {
        SplitFractions::new(a, b, c).unwrap()
    }

    #[test]
    fn fractions_must_sum_to_one() {
        assert!(SplitFractions::new(0.5, 0.5, 0.1).is_err());
        assert!(SplitFractions::new(1.2, -0.2, 0.0).is_err());
        assert!(SplitFractions::new(0.4, 0.4, 0.2).is_ok());
    }

    #[test]
    fn all_train() {
        let d = gen_gaussian_classes(&reference_spec(20, 0)).unwrap();
        let (tr, ca, te) = split(&d, fr(1.0, 0.0, 0.0), 1).unwrap();
        assert_eq!(tr.len(), 60);
        assert!(ca.is_empty() && te.is_empty());
    }

    #[test]
    fn stratified_disjoint_exhaustive() {
        let d = gen_gaussian_classes(&reference_spec(101, 0)).unwrap();
        let (tr, ca, te) = split(&d, fr(0.4, 0.4, 0.2), 5).unwrap();
        assert_eq!(tr.len() + ca.len() + te.len(), d.len());
        for c in 1..=3 {
            assert!((tr.class_count(c) as f64 - 40.4).abs() <= 1.0);
            assert!((ca.class_count(c) as f64 - 40.4).abs() <= 1.0);
        }
        let mut rows: Vec<Vec<u64>> = [&tr, &ca, &te]
            .iter()
            .flat_map(|s| {
                s.features()
                    .iter_rows()
                    .map(|r| r.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
                    .collect::<Vec<_>>()
            })
            .collect();
        rows.sort();
        rows.dedup();
        assert_eq!(rows.len(), d.len());
        let again = split(&d, fr(0.4, 0.4, 0.2), 5).unwrap();
        assert_eq!(again.0, tr);
    }

    #[test]
    fn outliers_only_in_test() {
        let base = gen_gaussian_classes(&reference_spec(10, 0)).unwrap();
        let out = LabeledDataset::new(
            Tensor::zeros(&[4, 2]),
            vec![Label::Outlier; 4],
            vec![Source::Contamination; 4],
            3,
        )
        .unwrap();
        let d = base.concat(&out).unwrap();
        let (tr, ca, te) = split(&d, fr(0.5, 0.5, 0.0), 0).unwrap();
        assert_eq!(tr.n_outliers() + ca.n_outliers(), 0);
        assert_eq!(te.n_outliers(), 4);
    }

    #[test]
    fn subsample_caps_each_class() {
        let d = gen_gaussian_classes(&reference_spec(30, 0)).unwrap();
        let s = subsample_per_class(&d, 7, 1).unwrap();
        assert_eq!(s.len(), 21);
        assert_eq!(s, subsample_per_class(&d, 7, 1).unwrap());
        assert_eq!(subsample_per_class(&d, 100, 1).unwrap(), d);
    }

    #[test]
    fn hold_out_relabels() {
        let d = gen_gaussian_classes(&reference_spec(5, 0)).unwrap();
        let (rest, held) = hold_out_class(&d, 2).unwrap();
        assert_eq!(held.rows(), 5);
        assert_eq!(rest.n_classes(), 2);
        assert_eq!(rest.class_count(1), 5);
        assert_eq!(rest.class_count(2), 5);
    }

    #[test]
    fn normalizer_behaviour() {
        let x = Tensor::from_rows(&[vec![1.0, 5.0], vec![3.0, 5.0], vec![5.0, 5.0]]).unwrap();
        let n = Normalizer::fit(&x).unwrap();
        assert_eq!(n.std[1], 1.0);
        let t = n.transform(&x).unwrap();
        assert_eq!(t.row(1), &[0.0, 0.0]);
        let back = n.inverse_transform(&t).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let z = Normalizer::fit(&t).unwrap().transform(&t).unwrap();
        for (a, b) in z.data().iter().zip(t.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
