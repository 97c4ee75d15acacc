//! Experiment configuration: one JSON document, overridable from flags.

use std::path::{Path, PathBuf};

use fci_core::baselines::ClassifierConfig;
use fci_core::conformal::{ConformalConfig, PValueMode};
use fci_core::datasets::{
    reference_outliers, reference_spec, GaussianClass, OutlierSource, SplitFractions,
};
use fci_core::flow::{FlowArchitecture, FlowSpec, LatentSpec, TrainConfig};
use fci_core::pipeline::FciConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    /// Gaussian classes plus a held-out Gaussian outlier class.
    Synthetic {
        classes: Vec<GaussianClass>,
        outliers: OutlierSource,
    },
    /// IDX image and label files; one class is held out as outliers.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        holdout_class: usize,
        #[serde(default)]
        max_per_class: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DataSource,
    pub fractions: SplitFractions,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic {
                classes: reference_spec(2500, 0).classes,
                outliers: reference_outliers(),
            },
            fractions: SplitFractions {
                train: 0.4,
                calibration: 0.4,
                test: 0.2,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub architecture: FlowArchitecture,
    pub train: TrainConfig,
    pub normalize: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 2,
            architecture: FlowArchitecture::default(),
            train: TrainConfig::default(),
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContaminationConfig {
    pub rates: Vec<f64>,
}

impl Default for ContaminationConfig {
    fn default() -> Self {
        Self {
            rates: vec![0.0, 0.05, 0.10],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselinesConfig {
    pub enabled: bool,
    pub classifier: ClassifierConfig,
}

impl Default for BaselinesConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            classifier: ClassifierConfig::default(),
        }
    }
}

/// Everything one experiment needs. Nested seeds are ignored: every random
/// stream is derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub conformal: ConformalConfig,
    pub contamination: ContaminationConfig,
    pub baselines: BaselinesConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            conformal: ConformalConfig::default(),
            contamination: ContaminationConfig::default(),
            baselines: BaselinesConfig::default(),
            seed: 0,
            output_dir: PathBuf::from("fci-out"),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub out: Option<PathBuf>,
    pub rates: Vec<f64>,
    pub p_value_mode: Option<PValueMode>,
    pub baselines: Option<bool>,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> anyhow::Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| invalid(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| invalid(format!("config {}: {e}", p.display())))?
            }
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(a) = o.alpha {
            self.conformal.alpha = a;
        }
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
        if !o.rates.is_empty() {
            self.contamination.rates = o.rates.clone();
        }
        if let Some(m) = o.p_value_mode {
            self.conformal.p_value_mode = m;
        }
        if let Some(b) = o.baselines {
            self.baselines.enabled = b;
        }
        self.model.train.seed = self.seed;
        self.baselines.classifier.seed = self.seed;
    }

    /// Check every section before any work starts.
    pub fn validate(&self) -> anyhow::Result<()> {
        let core = |r: fci_core::Result<()>| r.map_err(|e| invalid(e.to_string()));
        core(self.dataset.fractions.validate())?;
        match &self.dataset.source {
            DataSource::Synthetic { classes, outliers } => {
                core(self.synthetic_spec().expect("synthetic source").validate())?;
                if classes.len() < 2 {
                    return Err(invalid("need at least 2 classes"));
                }
                let dim = classes[0].dim();
                if let OutlierSource::Gaussian { mean, .. } = outliers {
                    if mean.len() != dim {
                        return Err(invalid(format!(
                            "outlier mean has dimension {}, classes have {dim}",
                            mean.len()
                        )));
                    }
                }
                core(LatentSpec::new(self.model.latent_dim).and_then(|l| l.check_input_dim(dim)))?;
            }
            DataSource::Idx {
                images,
                labels,
                holdout_class,
                max_per_class,
            } => {
                for p in [images, labels] {
                    if !p.is_file() {
                        return Err(invalid(format!("IDX file {} does not exist", p.display())));
                    }
                }
                if *holdout_class == 0 {
                    return Err(invalid("holdout_class is 1-based"));
                }
                if *max_per_class == Some(0) {
                    return Err(invalid("max_per_class must be positive"));
                }
                core(LatentSpec::new(self.model.latent_dim).map(|_| ()))?;
            }
        }
        core(self.fci_config().validate())?;
        core(self.baselines.classifier.validate())?;
        for &r in &self.contamination.rates {
            if !(0.0..1.0).contains(&r) {
                return Err(invalid(format!("contamination rate {r} outside [0, 1)")));
            }
        }
        if self.contamination.rates.is_empty() {
            return Err(invalid("at least one contamination rate is required"));
        }
        Ok(())
    }

    pub fn synthetic_spec(&self) -> Option<fci_core::datasets::SyntheticSpec> {
        match &self.dataset.source {
            DataSource::Synthetic { classes, .. } => Some(fci_core::datasets::SyntheticSpec {
                classes: classes.clone(),
                seed: self.seed,
            }),
            DataSource::Idx { .. } => None,
        }
    }

    pub fn fci_config(&self) -> FciConfig {
        FciConfig {
            flow: FlowSpec {
                latent: LatentSpec {
                    dim: self.model.latent_dim,
                },
                architecture: self.model.architecture.clone(),
            },
            train: self.model.train.clone(),
            conformal: self.conformal,
            normalize: self.model.normalize,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn split_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    pub fn contamination_seed(&self, rate: f64) -> u64 {
        self.seed
            .wrapping_add(1000)
            .wrapping_add((rate * 1e6).round() as u64)
    }
}

/// File-name tag of a contamination rate, e.g. `0.05`.
pub fn rate_tag(rate: f64) -> String {
    format!("{rate}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = ExperimentConfig::default();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        cfg.validate().unwrap();
    }

    #[test]
    fn flags_override_file_values() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply(&Overrides {
            seed: Some(9),
            alpha: Some(0.1),
            rates: vec![0.2],
            p_value_mode: Some(PValueMode::PaperLiteral),
            baselines: Some(false),
            ..Default::default()
        });
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.model.train.seed, 9);
        assert_eq!(cfg.conformal.alpha, 0.1);
        assert_eq!(cfg.contamination.rates, vec![0.2]);
        assert!(!cfg.baselines.enabled);
    }

    #[test]
    fn invalid_sections_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.conformal.alpha = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.contamination.rates = vec![1.0];
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.model.latent_dim = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.model.train.epochs = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rate_tags() {
        assert_eq!(rate_tag(0.0), "0");
        assert_eq!(rate_tag(0.05), "0.05");
        assert_eq!(rate_tag(0.1), "0.1");
    }
}
