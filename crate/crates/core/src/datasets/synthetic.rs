use nalgebra::{DMatrix, DVector};
use rand::seq::{index, SliceRandom};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Label, LabeledDataset, Source};
use crate::autodiff::Tensor;
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// One multivariate normal class. A missing covariance means identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianClass {
    pub mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub n: usize,
}

impl GaussianClass {
    pub fn isotropic(mean: Vec<f64>, n: usize) -> Self {
        Self { mean, cov: None, n }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Lower Cholesky factor of the covariance.
    fn cholesky(&self, index: usize) -> Result<DMatrix<f64>> {
        let p = self.dim();
        if p == 0 {
            return Err(Error::Config(format!("class {index}: empty mean vector")));
        }
        let Some(cov) = &self.cov else {
            return Ok(DMatrix::identity(p, p));
        };
        if cov.len() != p || cov.iter().any(|r| r.len() != p) {
            return Err(Error::Config(format!(
                "class {index}: covariance must be {p}x{p}"
            )));
        }
        let m = DMatrix::from_fn(p, p, |i, j| cov[i][j]);
        let asym = (0..p)
            .flat_map(|i| (0..p).map(move |j| (i, j)))
            .any(|(i, j)| (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * (1.0 + m[(i, j)].abs()));
        if asym || !m.iter().all(|v| v.is_finite()) {
            return Err(Error::Config(format!(
                "class {index}: covariance is not symmetric"
            )));
        }
        m.cholesky().map(|c| c.l()).ok_or_else(|| {
            Error::Config(format!(
                "class {index}: covariance is not positive definite"
            ))
        })
    }

    fn sample_into(&self, chol: &DMatrix<f64>, n: usize, rng: &mut Rng, out: &mut Vec<f64>) {
        let p = self.dim();
        let mean = DVector::from_column_slice(&self.mean);
        for _ in 0..n {
            let z = DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
            let x = &mean + chol * z;
            out.extend(x.iter());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: Vec<GaussianClass>,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.classes.first() else {
            return Err(Error::Config("synthetic spec has no classes".into()));
        };
        for (k, c) in self.classes.iter().enumerate() {
            if c.dim() != first.dim() {
                return Err(Error::Config(format!(
                    "class {} has dimension {}, expected {}",
                    k + 1,
                    c.dim(),
                    first.dim()
                )));
            }
            if c.n == 0 {
                return Err(Error::Config(format!("class {} has zero samples", k + 1)));
            }
            if !c.mean.iter().all(|v| v.is_finite()) {
                return Err(Error::Config(format!(
                    "class {} has a non-finite mean",
                    k + 1
                )));
            }
            c.cholesky(k + 1)?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.classes.first().map_or(0, GaussianClass::dim)
    }
}

/// Three unit-variance classes at (0,0), (4,0) and (0,4).
pub fn reference_spec(n_per_class: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        classes: [[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]]
            .iter()
            .map(|m| GaussianClass::isotropic(m.to_vec(), n_per_class))
            .collect(),
        seed,
    }
}

/// Unit-variance outliers centred at (12,12).
pub fn reference_outliers() -> OutlierSource {
    OutlierSource::Gaussian {
        mean: vec![12.0, 12.0],
        cov: None,
    }
}

/// Rows grouped by class in spec order, class `k` labelled `k + 1`.
pub fn gen_gaussian_classes(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (k, class) in spec.classes.iter().enumerate() {
        let chol = class.cholesky(k + 1)?;
        class.sample_into(&chol, class.n, &mut rng, &mut data);
        labels.extend(std::iter::repeat_n(Label::Class(k + 1), class.n));
    }
    let n = labels.len();
    LabeledDataset::new(
        Tensor::from_vec(vec![n, spec.dim()], data)?,
        labels,
        vec![Source::Synthetic; n],
        spec.classes.len(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OutlierSource {
    /// Fresh draws from a held-out Gaussian class.
    Gaussian {
        mean: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cov: Option<Vec<Vec<f64>>>,
    },
    /// Rows of a held-out real class, sampled without replacement.
    Rows { features: Tensor },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationSpec {
    pub rate: f64,
    pub source: OutlierSource,
    #[serde(default)]
    pub seed: u64,
}

/// Outliers to add to `m_in` inliers so they make up `rate` of the result.
pub fn contamination_count(m_in: usize, rate: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!(
            "contamination rate must lie in [0, 1), got {rate}"
        )));
    }
    Ok((rate * m_in as f64 / (1.0 - rate)).round() as usize)
}

/// Append outliers to a test set and shuffle the rows.
pub fn inject_contamination(
    test: &LabeledDataset,
    spec: &ContaminationSpec,
) -> Result<LabeledDataset> {
    let m_in = test.len() - test.n_outliers();
    let o = contamination_count(m_in, spec.rate)?;
    let p = test.dim();
    let mut rng = rng::seeded(spec.seed);
    let outliers = match &spec.source {
        OutlierSource::Gaussian { mean, cov } => {
            let class = GaussianClass {
                mean: mean.clone(),
                cov: cov.clone(),
                n: o,
            };
            if class.dim() != p {
                return Err(Error::Shape(format!(
                    "outlier mean has dimension {}, data has {p}",
                    class.dim()
                )));
            }
            let chol = class.cholesky(0)?;
            let mut data = Vec::with_capacity(o * p);
            class.sample_into(&chol, o, &mut rng, &mut data);
            Tensor::from_vec(vec![o, p], data)?
        }
        OutlierSource::Rows { features } => {
            if features.cols() != p {
                return Err(Error::Shape(format!(
                    "outlier rows have {} features, data has {p}",
                    features.cols()
                )));
            }
            if features.rows() < o {
                return Err(Error::InsufficientData(format!(
                    "need {o} outlier rows, source has {}",
                    features.rows()
                )));
            }
            let mut idx = index::sample(&mut rng, features.rows(), o).into_vec();
            idx.sort_unstable();
            features.select_rows(&idx)?
        }
    };
    let extra = LabeledDataset::new(
        outliers,
        vec![Label::Outlier; o],
        vec![Source::Contamination; o],
        test.n_classes(),
    )?;
    let combined = test.concat(&extra)?;
    let mut order: Vec<usize> = (0..combined.len()).collect();
    order.shuffle(&mut rng);
    combined.select(&order)
}
