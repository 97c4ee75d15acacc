//! Comparison methods: a softmax classifier, Scaling sets built from its raw
//! probabilities, and split-conformal Adaptive Prediction Sets (APS).
//!
//! Both set constructions always return at least one class, so neither can
//! flag an outlier.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    softmax, Activation, Adam, AdamConfig, Mlp, MlpDocument, MlpSpec, Tape, Tensor,
};
use crate::conformal::{check_alpha, PredictiveSet};
use crate::{rng, Error, Result};

const ROW_SUM_TOL: f64 = 1e-9;

/// Row-stochastic matrix of class probabilities; column `k` is class `k + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbMatrix {
    probs: Tensor,
}

pub fn check_prob_row(row: &[f64], index: usize) -> Result<()> {
    let invalid = |reason: String| Err(Error::InvalidProbabilities { row: index, reason });
    if row.is_empty() {
        return invalid("no classes".into());
    }
    if let Some(p) = row.iter().find(|p| !(**p >= 0.0 && **p <= 1.0)) {
        return invalid(format!("entry {p} outside [0, 1]"));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > ROW_SUM_TOL {
        return invalid(format!("sums to {total}"));
    }
    Ok(())
}

impl ProbMatrix {
    pub fn new(probs: Tensor) -> Result<Self> {
        if probs.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "probability matrix must be 2-D, got {:?}",
                probs.shape()
            )));
        }
        for (i, row) in probs.iter_rows().enumerate() {
            check_prob_row(row, i)?;
        }
        Ok(Self { probs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Tensor::from_rows(rows)?)
    }

    pub fn n_samples(&self) -> usize {
        self.probs.rows()
    }

    pub fn n_classes(&self) -> usize {
        self.probs.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.probs.row(i)
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.iter_rows()
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.probs
    }

    /// Parse `sample_id,p_1..p_L`. Rows are taken in file order.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty probability file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 2 || cols[0] != "sample_id" {
            return Err(Error::Parse(format!("bad probability header {header:?}")));
        }
        let l = cols.len() - 1;
        let rows = lines
            .enumerate()
            .map(|(i, line)| {
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() != l + 1 {
                    return Err(Error::Parse(format!(
                        "probability row {i} has {} fields, expected {}",
                        fields.len(),
                        l + 1
                    )));
                }
                fields[1..]
                    .iter()
                    .map(|f| {
                        f.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::Parse(format!("row {i}: {e}")))
                    })
                    .collect()
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        if rows.is_empty() {
            return Err(Error::InsufficientData(
                "probability file has no rows".into(),
            ));
        }
        Self::from_rows(&rows)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_id");
        for k in 1..=self.n_classes() {
            out.push_str(&format!(",p_{k}"));
        }
        out.push('\n');
        for (i, row) in self.iter_rows().enumerate() {
            out.push_str(&i.to_string());
            for p in row {
                out.push_str(&format!(",{p}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            activation: Activation::LeakyRelu,
            epochs: 30,
            batch_size: 64,
            lr: 5e-3,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "classifier epochs and batch size must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "classifier lr must be positive, got {}",
                self.lr
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config(
                "classifier hidden widths must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// MLP producing logits, read through a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxClassifier {
    net: Mlp,
}

impl SoftmaxClassifier {
    pub fn from_mlp(net: Mlp) -> Result<Self> {
        if net.output_dim() < 2 {
            return Err(Error::Config("classifier needs at least 2 outputs".into()));
        }
        Ok(Self { net })
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn n_classes(&self) -> usize {
        self.net.output_dim()
    }

    pub fn predict_proba(&self, x: &Tensor) -> Result<ProbMatrix> {
        let logits = self.net.predict(x)?;
        let rows: Vec<Vec<f64>> = logits.iter_rows().map(softmax).collect();
        ProbMatrix::new(Tensor::from_vec(
            vec![rows.len(), self.n_classes()],
            rows.concat(),
        )?)
    }

    pub fn to_document(&self) -> MlpDocument {
        self.net.to_document()
    }

    pub fn from_document(doc: &MlpDocument) -> Result<Self> {
        Self::from_mlp(Mlp::from_document(doc)?)
    }
}

/// Fit a softmax classifier by minibatch cross-entropy. Labels are `1..=n_classes`.
pub fn train_softmax_classifier(
    features: &Tensor,
    labels: &[usize],
    n_classes: usize,
    config: &ClassifierConfig,
) -> Result<SoftmaxClassifier> {
    config.validate()?;
    if features.rows() != labels.len() || labels.is_empty() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} labels",
            features.rows(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l == 0 || l > n_classes) {
        return Err(Error::Config(format!(
            "label {bad} outside 1..={n_classes}"
        )));
    }
    let first = labels[0];
    if n_classes < 2 || labels.iter().all(|&l| l == first) {
        return Err(Error::InsufficientData(
            "classifier needs at least 2 classes present".into(),
        ));
    }

    let mut rng = rng::seeded(config.seed);
    let mut widths = vec![features.cols()];
    widths.extend(&config.hidden);
    widths.push(n_classes);
    let spec = MlpSpec::uniform(&widths, config.activation, Activation::Identity)?;
    let mut net = Mlp::new(spec, &mut rng)?;
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr), net.params());
    let targets: Vec<usize> = labels.iter().map(|l| l - 1).collect();
    let mut order: Vec<usize> = (0..labels.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let x = tape.leaf(features.select_rows(idx)?);
            let (logits, bound) = net.forward(&mut tape, x)?;
            let t: Vec<usize> = idx.iter().map(|&i| targets[i]).collect();
            let loss = tape.softmax_cross_entropy(logits, &t)?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    what: "classifier loss",
                    epoch,
                    iteration: 0,
                });
            }
            total += value * idx.len() as f64;
            let grads = tape.backward(loss)?;
            net.accumulate_grads(&grads, &bound);
            adam.step(net.params_mut());
        }
        log::debug!(
            "classifier epoch {}: loss {:.4}",
            epoch + 1,
            total / labels.len() as f64
        );
    }
    SoftmaxClassifier::from_mlp(net)
}

/// Class indices (0-based) by descending probability; ties keep class order.
fn descending_order(row: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
    order
}

/// Take classes in descending order until the cumulative mass reaches `target`.
fn greedy_set(row: &[f64], target: f64, alpha: f64) -> PredictiveSet {
    let mut classes = Vec::new();
    let mut mass = 0.0;
    for k in descending_order(row) {
        classes.push(k + 1);
        mass += row[k];
        if mass >= target {
            break;
        }
    }
    PredictiveSet::new(classes, alpha)
}

/// Highest-probability classes until their mass reaches `1 - alpha`.
/// `alpha = 0` is allowed and yields the full support.
pub fn scaling_set(row: &[f64], alpha: f64) -> Result<PredictiveSet> {
    check_prob_row(row, 0)?;
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Config(format!(
            "alpha must lie in [0, 1), got {alpha}"
        )));
    }
    Ok(greedy_set(row, 1.0 - alpha, alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApsCalibration {
    pub tau: f64,
    pub n_cal: usize,
    pub alpha: f64,
}

/// Probability mass of all classes ranked at or above the true one.
pub fn aps_score(row: &[f64], label: usize) -> Result<f64> {
    if label == 0 || label > row.len() {
        return Err(Error::Config(format!(
            "label {label} outside 1..={}",
            row.len()
        )));
    }
    let mut mass = 0.0;
    for k in descending_order(row) {
        mass += row[k];
        if k + 1 == label {
            break;
        }
    }
    Ok(mass.min(1.0))
}

/// Conformal threshold from precomputed scores: the `ceil((n+1)(1-alpha))`-th
/// smallest, or 1 when that rank exceeds `n`.
pub fn aps_threshold(scores: &[f64], alpha: f64) -> Result<ApsCalibration> {
    check_alpha(alpha)?;
    let n = scores.len();
    if n == 0 {
        return Err(Error::InsufficientData("empty calibration set".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    // The tolerance keeps exact products such as 5 * 0.8 from rounding up.
    let rank = ((n as f64 + 1.0) * (1.0 - alpha) - 1e-9).ceil().max(1.0) as usize;
    let tau = if rank > n { 1.0 } else { sorted[rank - 1] };
    Ok(ApsCalibration {
        tau,
        n_cal: n,
        alpha,
    })
}

pub fn aps_calibrate(probs: &ProbMatrix, labels: &[usize], alpha: f64) -> Result<ApsCalibration> {
    if probs.n_samples() != labels.len() {
        return Err(Error::Shape(format!(
            "{} probability rows but {} labels",
            probs.n_samples(),
            labels.len()
        )));
    }
    let scores = probs
        .iter_rows()
        .zip(labels)
        .map(|(row, &l)| aps_score(row, l))
        .collect::<Result<Vec<_>>>()?;
    aps_threshold(&scores, alpha)
}

pub fn aps_set(row: &[f64], cal: &ApsCalibration) -> Result<PredictiveSet> {
    check_prob_row(row, 0)?;
    Ok(greedy_set(row, cal.tau, cal.alpha))
}
