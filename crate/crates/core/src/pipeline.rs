//! In-memory composition: fit flows and pools, predict sets, run baselines
//! and score everything on one test set.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::baselines::{
    aps_calibrate, aps_set, scaling_set, train_softmax_classifier, ApsCalibration,
    ClassifierConfig, SoftmaxClassifier,
};
use crate::conformal::{
    build_pool, p_values_batch, predictive_set, ConformalConfig, PValueMode, PValueVector,
    PredictiveSet, ScorePool,
};
use crate::datasets::{LabeledDataset, Normalizer};
use crate::eval::{evaluate, EvalReport};
use crate::flow::{train_classes, ClassFlowModel, FlowSpec, LossTrace, TrainConfig};
use crate::{Error, Result};

/// Level of the per-class KS uniformity test in reports.
pub const KS_LEVEL: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FciConfig {
    pub flow: FlowSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub conformal: ConformalConfig,
    /// Standardize inputs with training statistics before everything else.
    #[serde(default = "default_true")]
    pub normalize: bool,
}

fn default_true() -> bool {
    true
}

impl FciConfig {
    pub fn new(latent_dim: usize) -> Result<Self> {
        Ok(Self {
            flow: FlowSpec {
                latent: crate::flow::LatentSpec::new(latent_dim)?,
                architecture: Default::default(),
            },
            train: TrainConfig::default(),
            conformal: ConformalConfig::default(),
            normalize: true,
        })
    }

    pub fn validate(&self) -> Result<()> {
        crate::flow::LatentSpec::new(self.flow.latent.dim)?;
        self.train.validate()?;
        self.conformal.validate()
    }
}

/// Trained flows with their calibration pools.
#[derive(Debug, Clone)]
pub struct FittedFci {
    pub models: Vec<ClassFlowModel>,
    pub pools: Vec<ScorePool>,
    pub traces: Vec<LossTrace>,
    pub normalizer: Option<Normalizer>,
}

/// Train one flow per class on `train`. Returns the models, their loss
/// traces and the input normalizer (when enabled).
pub fn fit_flows(
    train: &LabeledDataset,
    config: &FciConfig,
) -> Result<(Vec<ClassFlowModel>, Vec<LossTrace>, Option<Normalizer>)> {
    config.validate()?;
    if train.n_outliers() > 0 {
        return Err(Error::Config(
            "training data must not contain outliers".into(),
        ));
    }
    let normalizer = config
        .normalize
        .then(|| Normalizer::fit(train.features()))
        .transpose()?;
    let x = apply_normalizer(normalizer.as_ref(), train.features())?;
    let fitted = train_classes(
        &x,
        &train.class_labels()?,
        train.n_classes(),
        &config.flow,
        &config.train,
    )?;
    let (models, traces) = fitted.into_iter().unzip();
    Ok((models, traces, normalizer))
}

/// Score pools of each class from that class's rows of `data`.
pub fn build_pools(
    models: &[ClassFlowModel],
    normalizer: Option<&Normalizer>,
    data: &LabeledDataset,
) -> Result<Vec<ScorePool>> {
    let x = apply_normalizer(normalizer, data.features())?;
    let labels = data.class_labels()?;
    models
        .iter()
        .map(|m| {
            let idx: Vec<usize> = (0..labels.len())
                .filter(|&i| labels[i] == m.class_label)
                .collect();
            if idx.is_empty() {
                return Err(Error::InsufficientData(format!(
                    "class {} has no calibration points",
                    m.class_label
                )));
            }
            build_pool(m, &x.select_rows(&idx)?)
        })
        .collect()
}

fn apply_normalizer(normalizer: Option<&Normalizer>, x: &Tensor) -> Result<Tensor> {
    match normalizer {
        Some(n) => n.transform(x),
        None => Ok(x.clone()),
    }
}

/// Train flows on `train` and pool the scores of the same points.
pub fn fit_fci(train: &LabeledDataset, config: &FciConfig) -> Result<FittedFci> {
    let (models, traces, normalizer) = fit_flows(train, config)?;
    let pools = build_pools(&models, normalizer.as_ref(), train)?;
    Ok(FittedFci {
        models,
        pools,
        traces,
        normalizer,
    })
}

impl FittedFci {
    pub fn n_classes(&self) -> usize {
        self.models.len()
    }

    pub fn input_dim(&self) -> usize {
        self.models.first().map_or(0, ClassFlowModel::input_dim)
    }

    fn prepare(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "inputs have {} features, models were trained on {}",
                x.cols(),
                self.input_dim()
            )));
        }
        apply_normalizer(self.normalizer.as_ref(), x)
    }

    pub fn p_values(&self, x: &Tensor, mode: PValueMode) -> Result<Vec<PValueVector>> {
        if x.rows() == 0 {
            return Ok(vec![]);
        }
        p_values_batch(&self.models, &self.pools, &self.prepare(x)?, mode)
    }

    pub fn predict(
        &self,
        x: &Tensor,
        conformal: &ConformalConfig,
    ) -> Result<(Vec<PValueVector>, Vec<PredictiveSet>)> {
        conformal.validate()?;
        let pvs = self.p_values(x, conformal.p_value_mode)?;
        let sets = pvs
            .iter()
            .map(|pv| predictive_set(pv, conformal.alpha))
            .collect::<Result<Vec<_>>>()?;
        Ok((pvs, sets))
    }

    pub fn evaluate(
        &self,
        test: &LabeledDataset,
        conformal: &ConformalConfig,
    ) -> Result<EvalReport> {
        let (pvs, sets) = self.predict(test.features(), conformal)?;
        evaluate(&sets, test.labels(), Some(&pvs), conformal.alpha, KS_LEVEL)
    }
}

/// Softmax classifier trained on one split with APS calibrated on another.
#[derive(Debug, Clone)]
pub struct FittedBaselines {
    pub classifier: SoftmaxClassifier,
    pub aps: ApsCalibration,
    pub normalizer: Option<Normalizer>,
}

/// Softmax classifier on `train`, with its own input normalizer.
pub fn fit_classifier(
    train: &LabeledDataset,
    config: &ClassifierConfig,
    normalize: bool,
) -> Result<(SoftmaxClassifier, Option<Normalizer>)> {
    let normalizer = normalize
        .then(|| Normalizer::fit(train.features()))
        .transpose()?;
    let x = apply_normalizer(normalizer.as_ref(), train.features())?;
    let classifier =
        train_softmax_classifier(&x, &train.class_labels()?, train.n_classes(), config)?;
    Ok((classifier, normalizer))
}

pub fn calibrate_aps(
    classifier: &SoftmaxClassifier,
    normalizer: Option<&Normalizer>,
    calibration: &LabeledDataset,
    alpha: f64,
) -> Result<ApsCalibration> {
    let probs = classifier.predict_proba(&apply_normalizer(normalizer, calibration.features())?)?;
    aps_calibrate(&probs, &calibration.class_labels()?, alpha)
}

pub fn fit_baselines(
    train: &LabeledDataset,
    calibration: &LabeledDataset,
    config: &ClassifierConfig,
    alpha: f64,
    normalize: bool,
) -> Result<FittedBaselines> {
    let (classifier, normalizer) = fit_classifier(train, config, normalize)?;
    let aps = calibrate_aps(&classifier, normalizer.as_ref(), calibration, alpha)?;
    Ok(FittedBaselines {
        classifier,
        aps,
        normalizer,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMethod {
    Scaling,
    Aps,
}

impl FittedBaselines {
    pub fn sets(&self, x: &Tensor, method: BaselineMethod) -> Result<Vec<PredictiveSet>> {
        if x.rows() == 0 {
            return Ok(vec![]);
        }
        let x = apply_normalizer(self.normalizer.as_ref(), x)?;
        let probs = self.classifier.predict_proba(&x)?;
        probs
            .iter_rows()
            .map(|row| match method {
                BaselineMethod::Scaling => scaling_set(row, self.aps.alpha),
                BaselineMethod::Aps => aps_set(row, &self.aps),
            })
            .collect()
    }

    pub fn evaluate(&self, test: &LabeledDataset, method: BaselineMethod) -> Result<EvalReport> {
        let sets = self.sets(test.features(), method)?;
        evaluate(&sets, test.labels(), None, self.aps.alpha, KS_LEVEL)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{gen_gaussian_classes, reference_spec};

    #[test]
    fn outliers_rejected_in_training_data() {
        let d = gen_gaussian_classes(&reference_spec(10, 0)).unwrap();
        let out = crate::datasets::LabeledDataset::new(
            Tensor::zeros(&[1, 2]),
            vec![crate::datasets::Label::Outlier],
            vec![crate::datasets::Source::Contamination],
            3,
        )
        .unwrap();
        let cfg = FciConfig::new(2).unwrap();
        assert!(fit_fci(&d.concat(&out).unwrap(), &cfg).is_err());
    }
}
