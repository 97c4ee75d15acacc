//! Labeled datasets: synthetic Gaussian classes, contamination with
//! held-out outliers, IDX ingestion, stratified splits and normalization.

mod idx;
mod prep;
mod synthetic;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::{Error, Result};

pub use idx::{
    load_idx, parse_idx_images, parse_idx_labels, IdxImages, IDX_IMAGE_MAGIC, IDX_LABEL_MAGIC,
};
pub use prep::{hold_out_class, normalize, split, subsample_per_class, Normalizer, SplitFractions};
pub use synthetic::{
    contamination_count, gen_gaussian_classes, inject_contamination, reference_outliers,
    reference_spec, ContaminationSpec, GaussianClass, OutlierSource, SyntheticSpec,
};

/// A known class `1..=L`, or a point from outside every training class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Class(usize),
    Outlier,
}

impl Label {
    pub fn class(self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(c),
            Label::Outlier => None,
        }
    }

    pub fn is_outlier(self) -> bool {
        self == Label::Outlier
    }

    /// Export code: the class number, or 0 for outliers.
    pub fn code(self) -> usize {
        self.class().unwrap_or(0)
    }

    pub fn from_code(code: usize) -> Self {
        if code == 0 {
            Label::Outlier
        } else {
            Label::Class(code)
        }
    }
}

/// Where a row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Synthetic,
    Contamination,
    /// Record index within an IDX file.
    Idx(u32),
    Imported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    features: Tensor,
    labels: Vec<Label>,
    sources: Vec<Source>,
    n_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        features: Tensor,
        labels: Vec<Label>,
        sources: Vec<Source>,
        n_classes: usize,
    ) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "features must be 2-D, got {:?}",
                features.shape()
            )));
        }
        let n = features.rows();
        if labels.len() != n || sources.len() != n {
            return Err(Error::Shape(format!(
                "{n} feature rows, {} labels, {} sources",
                labels.len(),
                sources.len()
            )));
        }
        if !features.is_finite() {
            return Err(Error::Config("dataset contains non-finite features".into()));
        }
        if let Some(bad) = labels
            .iter()
            .find_map(|l| l.class().filter(|&c| c == 0 || c > n_classes))
        {
            return Err(Error::Config(format!(
                "label {bad} outside 1..={n_classes}"
            )));
        }
        Ok(Self {
            features,
            labels,
            sources,
            n_classes,
        })
    }

    pub fn empty(dim: usize, n_classes: usize) -> Self {
        Self {
            features: Tensor::zeros(&[0, dim]),
            labels: vec![],
            sources: vec![],
            n_classes,
        }
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn n_outliers(&self) -> usize {
        self.labels.iter().filter(|l| l.is_outlier()).count()
    }

    pub fn class_count(&self, class: usize) -> usize {
        self.labels
            .iter()
            .filter(|&&l| l == Label::Class(class))
            .count()
    }

    /// Row indices carrying `label`, in order.
    pub fn indices_of(&self, label: Label) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.labels[i] == label)
            .collect()
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self {
            features: self.features.select_rows(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            sources: indices.iter().map(|&i| self.sources[i]).collect(),
            n_classes: self.n_classes,
        })
    }

    pub fn class_features(&self, class: usize) -> Result<Tensor> {
        self.features
            .select_rows(&self.indices_of(Label::Class(class)))
    }

    /// Class numbers of every row; fails on outliers.
    pub fn class_labels(&self) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .map(|l| {
                l.class()
                    .ok_or_else(|| Error::Config("outlier rows are not allowed here".into()))
            })
            .collect()
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.n_classes != other.n_classes {
            return Err(Error::Config(format!(
                "cannot concatenate datasets with {} and {} classes",
                self.n_classes, other.n_classes
            )));
        }
        let features = if self.is_empty() {
            other.features.clone()
        } else if other.is_empty() {
            self.features.clone()
        } else {
            self.features.vstack(&other.features)?
        };
        Ok(Self {
            features,
            labels: [self.labels.as_slice(), &other.labels].concat(),
            sources: [self.sources.as_slice(), &other.sources].concat(),
            n_classes: self.n_classes,
        })
    }

    pub(crate) fn with_features(&self, features: Tensor) -> Result<Self> {
        Self::new(
            features,
            self.labels.clone(),
            self.sources.clone(),
            self.n_classes,
        )
    }

    /// CSV with header `label,f_1..f_p`; outliers are written as label 0.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label");
        for j in 1..=self.dim() {
            out.push_str(&format!(",f_{j}"));
        }
        out.push('\n');
        for (row, label) in self.features.iter_rows().zip(&self.labels) {
            out.push_str(&label.code().to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, n_classes: usize) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty dataset file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"label") {
            return Err(Error::Parse(format!("bad dataset header {header:?}")));
        }
        let p = cols.len() - 1;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != p + 1 {
                return Err(Error::Parse(format!(
                    "row {i}: {} fields, expected {}",
                    fields.len(),
                    p + 1
                )));
            }
            let code: usize = fields[0]
                .parse()
                .map_err(|e| Error::Parse(format!("row {i} label: {e}")))?;
            labels.push(Label::from_code(code));
            for f in &fields[1..] {
                data.push(
                    f.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("row {i}: {e}")))?,
                );
            }
        }
        let n = labels.len();
        Self::new(
            Tensor::from_vec(vec![n, p], data)?,
            labels,
            vec![Source::Imported; n],
            n_classes,
        )
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path, n_classes: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, n_classes)
    }
}
