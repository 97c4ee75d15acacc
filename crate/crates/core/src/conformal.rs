//! Non-conformity scores, calibration pools, p-values and predictive sets.
//!
//! The score of input `x` for class `l` is the squared norm of its latent
//! code, `T(x) = |I_l(x)|^2`. Under a well-trained inverse the latent is
//! standard normal, so `T` is approximately chi-squared with `d` degrees of
//! freedom, and large scores are evidence against class `l`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::flow::ClassFlowModel;
use crate::{par, Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PValueMode {
    /// `(1 + #{T_i >= t}) / (n + 1)`: small for extreme scores, and
    /// super-uniform under exchangeability.
    #[default]
    Smoothed,
    /// `#{T_i <= t} / n`, the counting rule taken literally. Large for
    /// extreme scores; kept for reproduction only.
    PaperLiteral,
}

impl std::str::FromStr for PValueMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smoothed" => Ok(Self::Smoothed),
            "paper-literal" => Ok(Self::PaperLiteral),
            other => Err(Error::Config(format!(
                "unknown p-value mode {other:?}, expected smoothed or paper-literal"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformalConfig {
    pub alpha: f64,
    #[serde(default)]
    pub p_value_mode: PValueMode,
}

impl Default for ConformalConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            p_value_mode: PValueMode::Smoothed,
        }
    }
}

impl ConformalConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

/// Sum of squares of a latent row.
pub fn score_of_latent(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum()
}

pub fn nonconformity_score(model: &ClassFlowModel, x: &[f64]) -> Result<f64> {
    let row = Tensor::row_vector(x)?;
    Ok(nonconformity_scores(model, &row)?[0])
}

/// Scores for every row of `x`.
pub fn nonconformity_scores(model: &ClassFlowModel, x: &Tensor) -> Result<Vec<f64>> {
    if !model.is_trained() {
        return Err(Error::Untrained(model.class_label));
    }
    let z = model.encode(x)?;
    Ok(z.iter_rows().map(score_of_latent).collect())
}

/// Calibration scores of one class, sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePool {
    class_label: usize,
    scores: Vec<f64>,
}

impl ScorePool {
    pub fn new(class_label: usize, mut scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::InsufficientData(format!(
                "class {class_label} has an empty score pool"
            )));
        }
        if let Some(bad) = scores.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::Config(format!(
                "class {class_label}: score {bad} is not finite and non-negative"
            )));
        }
        scores.sort_unstable_by(f64::total_cmp);
        Ok(Self {
            class_label,
            scores,
        })
    }

    pub fn class_label(&self) -> usize {
        self.class_label
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// `#{T_i >= t}`
    pub fn count_at_least(&self, t: f64) -> usize {
        self.scores.len() - self.scores.partition_point(|&s| s < t)
    }

    /// `#{T_i <= t}`
    pub fn count_at_most(&self, t: f64) -> usize {
        self.scores.partition_point(|&s| s <= t)
    }
}

/// Pool `T(X_i)` over the given class members.
pub fn build_pool(model: &ClassFlowModel, class_inputs: &Tensor) -> Result<ScorePool> {
    if class_inputs.shape().len() != 2 || class_inputs.rows() == 0 {
        return Err(Error::InsufficientData(format!(
            "class {} has no inputs",
            model.class_label
        )));
    }
    ScorePool::new(
        model.class_label,
        nonconformity_scores(model, class_inputs)?,
    )
}

pub fn p_value(pool: &ScorePool, t_new: f64, mode: PValueMode) -> f64 {
    let n = pool.len() as f64;
    match mode {
        PValueMode::Smoothed => (1.0 + pool.count_at_least(t_new) as f64) / (n + 1.0),
        PValueMode::PaperLiteral => pool.count_at_most(t_new) as f64 / n,
    }
}

/// One p-value per class, in class order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueVector(pub Vec<f64>);

impl PValueVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn n_classes(&self) -> usize {
        self.0.len()
    }
}

fn check_models(models: &[ClassFlowModel], pools: &[ScorePool]) -> Result<()> {
    if models.len() != pools.len() || models.is_empty() {
        return Err(Error::Config(format!(
            "{} models but {} pools",
            models.len(),
            pools.len()
        )));
    }
    Ok(())
}

pub fn p_values_all(
    models: &[ClassFlowModel],
    pools: &[ScorePool],
    x: &[f64],
    mode: PValueMode,
) -> Result<PValueVector> {
    let row = Tensor::row_vector(x)?;
    Ok(p_values_batch(models, pools, &row, mode)?.remove(0))
}

/// P-value vectors for every row of `x`. Encoding runs per class over the
/// whole batch; pool lookups run in parallel over rows.
pub fn p_values_batch(
    models: &[ClassFlowModel],
    pools: &[ScorePool],
    x: &Tensor,
    mode: PValueMode,
) -> Result<Vec<PValueVector>> {
    check_models(models, pools)?;
    let scores: Vec<Vec<f64>> =
        par::try_map_range(models.len(), |k| nonconformity_scores(&models[k], x))?;
    Ok(par::map_range(x.rows(), |i| {
        PValueVector(
            pools
                .iter()
                .zip(&scores)
                .map(|(pool, s)| p_value(pool, s[i], mode))
                .collect(),
        )
    }))
}

/// Labels `1..=L` whose p-value reaches `alpha`. May be empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSet {
    pub classes: Vec<usize>,
    pub alpha: f64,
}

impl PredictiveSet {
    pub fn new(mut classes: Vec<usize>, alpha: f64) -> Self {
        classes.sort_unstable();
        classes.dedup();
        Self { classes, alpha }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn contains(&self, label: usize) -> bool {
        self.classes.binary_search(&label).is_ok()
    }

    /// `1;3` style, or the literal `OUTLIER` for the empty set.
    pub fn to_token(&self) -> String {
        if self.classes.is_empty() {
            "OUTLIER".into()
        } else {
            self.classes
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(";")
        }
    }

    pub fn from_token(token: &str, alpha: f64) -> Result<Self> {
        if token == "OUTLIER" {
            return Ok(Self::new(vec![], alpha));
        }
        let classes = token
            .split(';')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("set {token:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(classes, alpha))
    }
}

pub fn predictive_set(pv: &PValueVector, alpha: f64) -> Result<PredictiveSet> {
    check_alpha(alpha)?;
    let classes =
        pv.0.iter()
            .enumerate()
            .filter(|(_, &p)| p >= alpha)
            .map(|(k, _)| k + 1)
            .collect();
    Ok(PredictiveSet::new(classes, alpha))
}

/// Every class rejected.
pub fn is_outlier(set: &PredictiveSet) -> bool {
    set.is_empty()
}

// CSV interfaces: pools as `class,score`; p-values as `sample_id,pi_1..pi_L`.

pub fn write_pool_csv(pool: &ScorePool, path: &Path) -> Result<()> {
    let mut out = String::from("class,score\n");
    for s in pool.scores() {
        out.push_str(&format!("{},{}\n", pool.class_label(), s));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_pool_csv(path: &Path) -> Result<ScorePool> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("class,score") {
        return Err(Error::Parse(format!(
            "{}: expected header class,score",
            path.display()
        )));
    }
    let mut class = None;
    let mut scores = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (c, s) = line.split_once(',').ok_or_else(|| {
            Error::Parse(format!("{}:{}: expected two fields", path.display(), i + 2))
        })?;
        let c: usize = c
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("class: {e}")))?;
        let s: f64 = s
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("score: {e}")))?;
        if *class.get_or_insert(c) != c {
            return Err(Error::Parse(format!(
                "{}: mixed classes in one pool",
                path.display()
            )));
        }
        scores.push(s);
    }
    let class =
        class.ok_or_else(|| Error::InsufficientData(format!("{}: empty pool", path.display())))?;
    ScorePool::new(class, scores)
}

pub fn p_values_to_csv(pvs: &[PValueVector]) -> String {
    let l = pvs.first().map_or(0, PValueVector::n_classes);
    let mut out = String::from("sample_id");
    for k in 1..=l {
        out.push_str(&format!(",pi_{k}"));
    }
    out.push('\n');
    for (i, pv) in pvs.iter().enumerate() {
        out.push_str(&i.to_string());
        for p in pv.values() {
            out.push_str(&format!(",{p}"));
        }
        out.push('\n');
    }
    out
}

pub fn p_values_from_csv(text: &str) -> Result<Vec<PValueVector>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty p-value file".into()))?;
    let l = header.split(',').count() - 1;
    lines
        .map(|line| {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != l + 1 {
                return Err(Error::Parse(format!(
                    "p-value row has {} fields, expected {}",
                    fields.len(),
                    l + 1
                )));
            }
            fields[1..]
                .iter()
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(e.to_string()))
                })
                .collect::<Result<Vec<_>>>()
                .map(PValueVector)
        })
        .collect()
}
