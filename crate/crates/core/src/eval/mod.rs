//! Set-valued prediction metrics, p-value diagnostics and report output.

mod stats;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conformal::{PValueVector, PredictiveSet};
use crate::datasets::Label;
use crate::{Error, Result};

pub use stats::{
    chi2_cdf, chi2_moment_check, gamma_p, ks_critical, ks_statistic, ks_test, ks_uniformity,
    ln_gamma, type1_rate, Chi2Report, KsResult, CHI2_MIN_SAMPLES, KS_MIN_SAMPLES,
};

fn check_aligned(sets: &[PredictiveSet], labels: &[Label]) -> Result<()> {
    if sets.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} sets but {} labels",
            sets.len(),
            labels.len()
        )));
    }
    if sets.is_empty() {
        return Err(Error::InsufficientData("no test points".into()));
    }
    Ok(())
}

fn mean_over(
    sets: &[PredictiveSet],
    labels: &[Label],
    f: impl Fn(&PredictiveSet, Label) -> f64,
) -> Result<f64> {
    check_aligned(sets, labels)?;
    Ok(sets.iter().zip(labels).map(|(s, &l)| f(s, l)).sum::<f64>() / sets.len() as f64)
}

/// Inliers count when their class is in the set, outliers when the set is empty.
pub fn coverage(sets: &[PredictiveSet], labels: &[Label]) -> Result<f64> {
    mean_over(sets, labels, |s, l| {
        let hit = match l {
            Label::Class(c) => s.contains(c),
            Label::Outlier => s.is_empty(),
        };
        f64::from(u8::from(hit))
    })
}

/// Mean of `|C| - [outlier]`. Ideal inliers contribute 1, ideal outliers -1.
pub fn size_error_paper(sets: &[PredictiveSet], labels: &[Label]) -> Result<f64> {
    mean_over(sets, labels, |s, l| {
        s.len() as f64 - f64::from(u8::from(l.is_outlier()))
    })
}

/// Mean of `|C| - 1` over inliers and `|C|` over outliers; ideal is 0.
pub fn size_error_excess(sets: &[PredictiveSet], labels: &[Label]) -> Result<f64> {
    mean_over(sets, labels, |s, l| match l {
        Label::Class(_) => s.len() as f64 - 1.0,
        Label::Outlier => s.len() as f64,
    })
}

/// Fraction of outliers given the empty set, if any outliers are present.
pub fn outlier_detection_rate(sets: &[PredictiveSet], labels: &[Label]) -> Result<Option<f64>> {
    check_aligned(sets, labels)?;
    Ok(empty_rate(sets, labels, Label::is_outlier))
}

/// Fraction of inliers wrongly given the empty set.
pub fn inlier_empty_rate(sets: &[PredictiveSet], labels: &[Label]) -> Result<Option<f64>> {
    check_aligned(sets, labels)?;
    Ok(empty_rate(sets, labels, |l| !l.is_outlier()))
}

fn empty_rate(
    sets: &[PredictiveSet],
    labels: &[Label],
    keep: impl Fn(Label) -> bool,
) -> Option<f64> {
    let picked: Vec<bool> = sets
        .iter()
        .zip(labels)
        .filter(|(_, &l)| keep(l))
        .map(|(s, _)| s.is_empty())
        .collect();
    (!picked.is_empty()).then(|| picked.iter().filter(|&&e| e).count() as f64 / picked.len() as f64)
}

/// `π^ℓ` of every test point whose true class is `ℓ`.
pub fn class_null_p_values(pvs: &[PValueVector], labels: &[Label], class: usize) -> Vec<f64> {
    pvs.iter()
        .zip(labels)
        .filter(|(_, &l)| l == Label::Class(class))
        .map(|(pv, _)| pv.values()[class - 1])
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsEntry {
    pub class: usize,
    pub stat: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub n: usize,
    pub inliers: usize,
    pub outliers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub coverage: f64,
    pub size_error_paper: f64,
    pub size_error_excess: f64,
    /// Per class: fraction of its own test points with `π^ℓ <= α`.
    pub type1_per_class: Vec<f64>,
    pub outlier_detection_rate: Option<f64>,
    pub inlier_empty_rate: Option<f64>,
    pub ks: Vec<KsEntry>,
    pub counts: Counts,
}

/// Build a report from sets, and from p-values when the method has them.
pub fn evaluate(
    sets: &[PredictiveSet],
    labels: &[Label],
    p_values: Option<&[PValueVector]>,
    alpha: f64,
    ks_level: f64,
) -> Result<EvalReport> {
    let outliers = labels.iter().filter(|l| l.is_outlier()).count();
    let mut type1_per_class = Vec::new();
    let mut ks = Vec::new();
    if let Some(pvs) = p_values {
        if pvs.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} p-value rows but {} labels",
                pvs.len(),
                labels.len()
            )));
        }
        let n_classes = pvs.first().map_or(0, PValueVector::n_classes);
        for class in 1..=n_classes {
            let null = class_null_p_values(pvs, labels, class);
            type1_per_class.push(type1_rate(&null, alpha));
            if null.len() >= KS_MIN_SAMPLES {
                let r = ks_uniformity(&null, ks_level)?;
                ks.push(KsEntry {
                    class,
                    stat: r.stat,
                    reject: r.reject,
                });
            }
        }
    }
    Ok(EvalReport {
        coverage: coverage(sets, labels)?,
        size_error_paper: size_error_paper(sets, labels)?,
        size_error_excess: size_error_excess(sets, labels)?,
        type1_per_class,
        outlier_detection_rate: outlier_detection_rate(sets, labels)?,
        inlier_empty_rate: inlier_empty_rate(sets, labels)?,
        ks,
        counts: Counts {
            n: labels.len(),
            inliers: labels.len() - outliers,
            outliers,
        },
    })
}

pub fn emit_report(report: &EvalReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub const DEFAULT_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramData {
    pub class: Option<usize>,
    /// `bins + 1` ascending edges over [0, 1].
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width histogram over [0, 1]; 1.0 falls in the last bin and values
/// outside the range are clamped into the end bins.
pub fn histogram(values: &[f64], bins: usize, class: Option<usize>) -> Result<HistogramData> {
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let edges = (0..=bins).map(|k| k as f64 / bins as f64).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let k = ((v.clamp(0.0, 1.0) * bins as f64).floor() as usize).min(bins - 1);
        counts[k] += 1;
    }
    Ok(HistogramData {
        class,
        edges,
        counts,
    })
}

impl HistogramData {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", self.edges[k], self.edges[k + 1], c));
        }
        out
    }
}

pub fn emit_histogram(p_values: &[f64], bins: usize, path: &Path) -> Result<HistogramData> {
    let h = histogram(p_values, bins, None)?;
    std::fs::write(path, h.to_csv()).map_err(|e| Error::io(path, e))?;
    Ok(h)
}
