//! The pipeline stages. Each reads the previous stage's files from the
//! output directory and records what it wrote in the manifest.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use fci_core::autodiff::MlpDocument;
use fci_core::baselines::{ApsCalibration, SoftmaxClassifier};
use fci_core::conformal::{self, PValueVector, PredictiveSet, ScorePool};
use fci_core::datasets::{
    gen_gaussian_classes, hold_out_class, inject_contamination, load_idx, split,
    subsample_per_class, ContaminationSpec, LabeledDataset, Normalizer, OutlierSource,
};
use fci_core::eval::{self, EvalReport};
use fci_core::flow::{ClassFlowDocument, ClassFlowModel, LossTrace};
use fci_core::pipeline::{self, BaselineMethod, FittedBaselines, FittedFci, KS_LEVEL};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::config::{rate_tag, DataSource, ExperimentConfig};
use crate::manifest::RunManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataMeta {
    pub n_classes: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClassifierBundle {
    network: MlpDocument,
    normalizer: Option<Normalizer>,
}

/// Paths inside the output directory, relative to it.
struct Layout;

impl Layout {
    const META: &'static str = "data/meta.json";
    const TRAIN: &'static str = "data/train.csv";
    const CAL: &'static str = "data/calibration.csv";
    const CONFIG: &'static str = "config.json";
    const NORMALIZER: &'static str = "models/normalizer.json";
    const CLASSIFIER: &'static str = "models/classifier.json";
    const APS: &'static str = "pools/aps.json";
    const COMPARISON: &'static str = "reports/comparison.csv";

    fn test(tag: &str) -> PathBuf {
        format!("data/test_{tag}.csv").into()
    }
    fn model(class: usize) -> PathBuf {
        format!("models/class_{class}.json").into()
    }
    fn trace(class: usize) -> PathBuf {
        format!("models/trace_{class}.json").into()
    }
    fn pool(class: usize) -> PathBuf {
        format!("pools/class_{class}.csv").into()
    }
    fn p_values(tag: &str) -> PathBuf {
        format!("predictions/pvalues_{tag}.csv").into()
    }
    fn sets(tag: &str) -> PathBuf {
        format!("predictions/sets_{tag}.csv").into()
    }
    fn report(method: &str, tag: &str) -> PathBuf {
        format!("reports/{method}_{tag}.json").into()
    }
    fn histogram(tag: &str, class: usize) -> PathBuf {
        format!("reports/hist_{tag}_class_{class}.csv").into()
    }
}

struct Out<'a> {
    root: &'a Path,
    written: Vec<PathBuf>,
}

impl<'a> Out<'a> {
    fn new(root: &'a Path) -> Self {
        Self {
            root,
            written: vec![],
        }
    }

    fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.root.join(rel)
    }

    fn write(&mut self, rel: impl AsRef<Path>, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
        let rel = rel.as_ref();
        let full = self.path(rel);
        if let Some(parent) = full.parent() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
        std::fs::write(&full, bytes).with_context(|| format!("writing {}", full.display()))?;
        self.written.push(rel.to_path_buf());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, rel: impl AsRef<Path>, value: &T) -> anyhow::Result<()> {
        self.write(rel, serde_json::to_string_pretty(value)? + "\n")
    }

    fn read(&self, rel: impl AsRef<Path>) -> anyhow::Result<String> {
        let full = self.path(rel);
        std::fs::read_to_string(&full)
            .with_context(|| format!("missing artifact {}", full.display()))
    }

    fn read_json<T: DeserializeOwned>(&self, rel: impl AsRef<Path>) -> anyhow::Result<T> {
        let rel = rel.as_ref();
        serde_json::from_str(&self.read(rel)?).with_context(|| format!("parsing {}", rel.display()))
    }

    fn read_dataset(
        &self,
        rel: impl AsRef<Path>,
        n_classes: usize,
    ) -> anyhow::Result<LabeledDataset> {
        let rel = rel.as_ref();
        LabeledDataset::from_csv(&self.read(rel)?, n_classes)
            .with_context(|| format!("parsing {}", rel.display()))
    }

    fn finish(self, manifest: &mut RunManifest, stage: &str) -> anyhow::Result<()> {
        manifest.record(stage, self.written);
        manifest.save(self.root)
    }
}

fn tags(cfg: &ExperimentConfig) -> Vec<String> {
    cfg.contamination
        .rates
        .iter()
        .map(|&r| rate_tag(r))
        .collect()
}

/// Generate or load the data, split it, and write one test file per rate.
pub fn gen_data(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let root = &cfg.output_dir;
    std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    let mut manifest = RunManifest::fresh(&cfg.hash());
    let mut out = Out::new(root);

    let (data, outliers) = match &cfg.dataset.source {
        DataSource::Synthetic { outliers, .. } => {
            let spec = cfg.synthetic_spec().expect("synthetic source");
            (gen_gaussian_classes(&spec)?, outliers.clone())
        }
        DataSource::Idx {
            images,
            labels,
            holdout_class,
            max_per_class,
        } => {
            let all = load_idx(images, labels)?;
            let (rest, held) = hold_out_class(&all, *holdout_class)?;
            let rest = match max_per_class {
                Some(k) => subsample_per_class(&rest, *k, cfg.seed)?,
                None => rest,
            };
            (rest, OutlierSource::Rows { features: held })
        }
    };
    let (train, cal, test) = split(&data, cfg.dataset.fractions, cfg.split_seed())?;
    let meta = DataMeta {
        n_classes: data.n_classes(),
        dim: data.dim(),
    };
    out.write_json(Layout::CONFIG, cfg)?;
    out.write_json(Layout::META, &meta)?;
    out.write(Layout::TRAIN, train.to_csv())?;
    out.write(Layout::CAL, cal.to_csv())?;
    for &rate in &cfg.contamination.rates {
        let spec = ContaminationSpec {
            rate,
            source: outliers.clone(),
            seed: cfg.contamination_seed(rate),
        };
        let t = inject_contamination(&test, &spec)?;
        log::info!(
            "rate {rate}: {} test rows, {} outliers",
            t.len(),
            t.n_outliers()
        );
        out.write(Layout::test(&rate_tag(rate)), t.to_csv())?;
    }
    out.finish(&mut manifest, "gen-data")
}

fn fci_training_data(out: &Out, meta: &DataMeta) -> anyhow::Result<LabeledDataset> {
    let train = out.read_dataset(Layout::TRAIN, meta.n_classes)?;
    let cal = out.read_dataset(Layout::CAL, meta.n_classes)?;
    Ok(train.concat(&cal)?)
}

/// Train one flow per class (and the baseline classifier when enabled).
pub fn train(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let root = &cfg.output_dir;
    let mut manifest = RunManifest::open(root, &cfg.hash())?;
    let mut out = Out::new(root);
    let meta: DataMeta = out.read_json(Layout::META)?;
    let data = fci_training_data(&out, &meta)?;

    let fci_cfg = cfg.fci_config();
    let (models, traces, normalizer) = pipeline::fit_flows(&data, &fci_cfg)?;
    for (m, t) in models.iter().zip(&traces) {
        out.write_json(
            Layout::model(m.class_label),
            &m.to_document(Some(&fci_cfg.train)),
        )?;
        out.write_json(Layout::trace(m.class_label), t)?;
    }
    if let Some(n) = &normalizer {
        out.write_json(Layout::NORMALIZER, n)?;
    }
    if cfg.baselines.enabled {
        let train = out.read_dataset(Layout::TRAIN, meta.n_classes)?;
        let (clf, norm) =
            pipeline::fit_classifier(&train, &cfg.baselines.classifier, cfg.model.normalize)?;
        out.write_json(
            Layout::CLASSIFIER,
            &ClassifierBundle {
                network: clf.to_document(),
                normalizer: norm,
            },
        )?;
    }
    out.finish(&mut manifest, "train")
}

fn load_models(out: &Out, meta: &DataMeta) -> anyhow::Result<Vec<ClassFlowModel>> {
    (1..=meta.n_classes)
        .map(|c| {
            let doc: ClassFlowDocument = out.read_json(Layout::model(c))?;
            Ok(ClassFlowModel::from_document(&doc)?)
        })
        .collect()
}

fn load_normalizer(out: &Out, cfg: &ExperimentConfig) -> anyhow::Result<Option<Normalizer>> {
    cfg.model
        .normalize
        .then(|| out.read_json(Layout::NORMALIZER))
        .transpose()
}

fn load_classifier(out: &Out) -> anyhow::Result<(SoftmaxClassifier, Option<Normalizer>)> {
    let b: ClassifierBundle = out.read_json(Layout::CLASSIFIER)?;
    Ok((SoftmaxClassifier::from_document(&b.network)?, b.normalizer))
}

/// Score pools from the flow training points; APS threshold from the
/// calibration split.
pub fn calibrate(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let root = &cfg.output_dir;
    let mut manifest = RunManifest::open(root, &cfg.hash())?;
    let mut out = Out::new(root);
    let meta: DataMeta = out.read_json(Layout::META)?;
    let models = load_models(&out, &meta)?;
    let normalizer = load_normalizer(&out, cfg)?;
    let data = fci_training_data(&out, &meta)?;
    let pools = pipeline::build_pools(&models, normalizer.as_ref(), &data)?;
    for pool in &pools {
        let rel = Layout::pool(pool.class_label());
        let full = out.path(&rel);
        std::fs::create_dir_all(full.parent().expect("pool path has a parent"))?;
        conformal::write_pool_csv(pool, &full)?;
        out.written.push(rel);
    }
    if cfg.baselines.enabled {
        let (clf, norm) = load_classifier(&out)?;
        let cal = out.read_dataset(Layout::CAL, meta.n_classes)?;
        let aps = pipeline::calibrate_aps(&clf, norm.as_ref(), &cal, cfg.conformal.alpha)?;
        out.write_json(Layout::APS, &aps)?;
    }
    out.finish(&mut manifest, "calibrate")
}

fn load_fci(out: &Out, cfg: &ExperimentConfig, meta: &DataMeta) -> anyhow::Result<FittedFci> {
    let models = load_models(out, meta)?;
    let pools = (1..=meta.n_classes)
        .map(|c| {
            let pool = conformal::read_pool_csv(&out.path(Layout::pool(c)))
                .with_context(|| format!("loading pool for class {c}"))?;
            if pool.class_label() != c {
                bail!("pool file for class {c} holds class {}", pool.class_label());
            }
            Ok(pool)
        })
        .collect::<anyhow::Result<Vec<ScorePool>>>()?;
    Ok(FittedFci {
        models,
        pools,
        traces: vec![LossTrace::default(); meta.n_classes],
        normalizer: load_normalizer(out, cfg)?,
    })
}

fn sets_to_csv(sets: &[PredictiveSet]) -> String {
    let mut s = String::from("sample_id,set\n");
    for (i, set) in sets.iter().enumerate() {
        s.push_str(&format!("{i},{}\n", set.to_token()));
    }
    s
}

fn sets_from_csv(text: &str, alpha: f64) -> anyhow::Result<Vec<PredictiveSet>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (_, token) = l.split_once(',').context("set row needs two fields")?;
            Ok(PredictiveSet::from_token(token.trim(), alpha)?)
        })
        .collect()
}

/// P-values and predictive sets for every test file, or for `test` alone.
pub fn predict(cfg: &ExperimentConfig, test: Option<&Path>) -> anyhow::Result<()> {
    let root = &cfg.output_dir;
    let mut manifest = RunManifest::open(root, &cfg.hash())?;
    let mut out = Out::new(root);
    let meta: DataMeta = out.read_json(Layout::META)?;
    let fci = load_fci(&out, cfg, &meta)?;

    let inputs: Vec<(String, LabeledDataset)> = match test {
        Some(path) => {
            let tag = path
                .file_stem()
                .and_then(|s| s.to_str())
                .context("test file needs a name")?
                .to_string();
            let d = LabeledDataset::read_csv(path, meta.n_classes)
                .with_context(|| format!("reading {}", path.display()))?;
            vec![(tag, d)]
        }
        None => tags(cfg)
            .into_iter()
            .map(|t| {
                let d = out.read_dataset(Layout::test(&t), meta.n_classes)?;
                Ok((t, d))
            })
            .collect::<anyhow::Result<_>>()?,
    };
    for (tag, data) in inputs {
        if data.dim() != meta.dim {
            bail!(
                "test data {tag} has {} features, training data has {}",
                data.dim(),
                meta.dim
            );
        }
        let (pvs, sets) = fci.predict(data.features(), &cfg.conformal)?;
        out.write(Layout::p_values(&tag), conformal::p_values_to_csv(&pvs))?;
        out.write(Layout::sets(&tag), sets_to_csv(&sets))?;
    }
    out.finish(&mut manifest, "predict")
}

fn comparison_row(rate: &str, method: &str, r: &EvalReport) -> String {
    format!(
        "{rate},{method},{},{},{}\n",
        r.coverage, r.size_error_paper, r.size_error_excess
    )
}

/// Reports, p-value histograms and the method comparison table.
pub fn evaluate(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let root = &cfg.output_dir;
    let mut manifest = RunManifest::open(root, &cfg.hash())?;
    let mut out = Out::new(root);
    let meta: DataMeta = out.read_json(Layout::META)?;
    let alpha = cfg.conformal.alpha;
    let baselines = if cfg.baselines.enabled {
        let (classifier, normalizer) = load_classifier(&out)?;
        let aps: ApsCalibration = out.read_json(Layout::APS)?;
        Some(FittedBaselines {
            classifier,
            aps,
            normalizer,
        })
    } else {
        None
    };

    let mut table =
        String::from("contamination_rate,method,coverage,size_error_paper,size_error_excess\n");
    for tag in tags(cfg) {
        let test = out.read_dataset(Layout::test(&tag), meta.n_classes)?;
        let pvs: Vec<PValueVector> =
            conformal::p_values_from_csv(&out.read(Layout::p_values(&tag))?)?;
        let sets = sets_from_csv(&out.read(Layout::sets(&tag))?, alpha)?;
        let report = eval::evaluate(&sets, test.labels(), Some(&pvs), alpha, KS_LEVEL)?;
        out.write_json(Layout::report("fci", &tag), &report)?;
        table.push_str(&comparison_row(&tag, "fci", &report));
        for class in 1..=meta.n_classes {
            let null = eval::class_null_p_values(&pvs, test.labels(), class);
            let h = eval::histogram(&null, eval::DEFAULT_BINS, Some(class))?;
            out.write(Layout::histogram(&tag, class), h.to_csv())?;
        }
        if let Some(b) = &baselines {
            for (method, name) in [
                (BaselineMethod::Scaling, "scaling"),
                (BaselineMethod::Aps, "aps"),
            ] {
                let r = b.evaluate(&test, method)?;
                out.write_json(Layout::report(name, &tag), &r)?;
                table.push_str(&comparison_row(&tag, name, &r));
            }
        }
    }
    out.write(Layout::COMPARISON, table)?;
    out.finish(&mut manifest, "evaluate")
}

pub fn run_experiment(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    gen_data(cfg)?;
    train(cfg)?;
    calibrate(cfg)?;
    predict(cfg, None)?;
    evaluate(cfg)
}
