use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn fci(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fci"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run fci")
}

fn small_config(out: &Path) -> Value {
    json!({
        "dataset": {
            "source": {
                "kind": "synthetic",
                "classes": [
                    {"mean": [0.0, 0.0], "n": 60},
                    {"mean": [4.0, 0.0], "n": 60},
                    {"mean": [0.0, 4.0], "n": 60}
                ],
                "outliers": {"kind": "gaussian", "mean": [12.0, 12.0]}
            },
            "fractions": {"train": 0.4, "calibration": 0.4, "test": 0.2}
        },
        "model": {
            "latent_dim": 2,
            "architecture": {"hidden": [8], "activation": "leaky-relu"},
            "train": {"epochs": 3, "batch_size": 16}
        },
        "baselines": {"classifier": {"hidden": [8], "epochs": 3, "batch_size": 16}},
        "contamination": {"rates": [0.0, 0.1]},
        "seed": 7,
        "output_dir": out
    })
}

fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn run_small(dir: &Path, name: &str) -> PathBuf {
    let out = dir.join(name);
    let cfg = write_config(dir, &small_config(&out));
    let o = fci(&["run-experiment", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut found = vec![];
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                found.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    found.sort();
    found
}

#[test]
fn full_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(dir.path(), "run");
    let files = files_under(&out);
    let has = |p: &str| files.contains(&PathBuf::from(p));
    for f in [
        "config.json",
        "manifest.json",
        "data/meta.json",
        "data/train.csv",
        "data/calibration.csv",
        "data/test_0.csv",
        "data/test_0.1.csv",
        "models/normalizer.json",
        "models/classifier.json",
        "pools/aps.json",
        "predictions/pvalues_0.csv",
        "predictions/sets_0.1.csv",
        "reports/fci_0.json",
        "reports/scaling_0.1.json",
        "reports/aps_0.json",
        "reports/comparison.csv",
    ] {
        assert!(has(f), "missing {f}");
    }
    for c in 1..=3 {
        assert!(has(&format!("models/class_{c}.json")));
        assert!(has(&format!("models/trace_{c}.json")));
        assert!(has(&format!("pools/class_{c}.csv")));
        assert!(has(&format!("reports/hist_0.1_class_{c}.csv")));
    }
    // config, manifest, meta, train, calibration; 2 test files; 3 files per class;
    // normalizer, classifier, aps; per rate 2 predictions, 3 reports, 3 histograms; comparison
    assert_eq!(files.len(), 5 + 2 + 9 + 3 + 2 * 8 + 1);

    let table = std::fs::read_to_string(out.join("reports/comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 2 * 3);

    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let stages = manifest["stages"].as_object().unwrap();
    for s in ["gen-data", "train", "calibrate", "predict", "evaluate"] {
        assert!(stages.contains_key(s), "stage {s}");
    }
    let listed: usize = stages
        .values()
        .map(|s| s["artifacts"].as_array().unwrap().len())
        .sum();
    assert_eq!(listed, files.len() - 1);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_small(dir.path(), "a");
    let b = run_small(dir.path(), "b");
    for f in [
        "predictions/pvalues_0.1.csv",
        "predictions/sets_0.csv",
        "models/class_2.json",
        "reports/comparison.csv",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn outlier_token_iff_all_p_values_below_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(dir.path(), "run");
    let pv = std::fs::read_to_string(out.join("predictions/pvalues_0.1.csv")).unwrap();
    let sets = std::fs::read_to_string(out.join("predictions/sets_0.1.csv")).unwrap();
    let mut outliers = 0;
    for (p, s) in pv.lines().skip(1).zip(sets.lines().skip(1)) {
        let ps: Vec<f64> = p.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        let token = s.split(',').nth(1).unwrap();
        let expect: Vec<String> = ps
            .iter()
            .enumerate()
            .filter(|(_, &v)| v >= 0.05)
            .map(|(i, _)| (i + 1).to_string())
            .collect();
        if expect.is_empty() {
            assert_eq!(token, "OUTLIER");
            outliers += 1;
        } else {
            assert_eq!(token, expect.join(";"));
        }
    }
    assert!(outliers > 0);
}

#[test]
fn stages_run_separately() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("staged");
    let cfg = write_config(dir.path(), &small_config(&out));
    let c = cfg.to_str().unwrap();
    for stage in ["gen-data", "train", "calibrate", "predict", "evaluate"] {
        let o = fci(&[stage, "--config", c, "--baselines", "off"]);
        assert!(
            o.status.success(),
            "{stage}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    assert!(out.join("reports/fci_0.1.json").exists());
    assert!(!out.join("models/classifier.json").exists());
}

#[test]
fn changed_config_between_stages_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let cfg = write_config(dir.path(), &small_config(&out));
    let c = cfg.to_str().unwrap();
    assert!(fci(&["gen-data", "--config", c]).status.success());
    let o = fci(&["train", "--config", c, "--seed", "8"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn predict_before_train_fails_with_runtime_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let cfg = write_config(dir.path(), &small_config(&out));
    let c = cfg.to_str().unwrap();
    assert!(fci(&["gen-data", "--config", c]).status.success());
    let o = fci(&["predict", "--config", c]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing artifact"));
}

#[test]
fn dimension_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(dir.path(), "run");
    let bad = dir.path().join("wide.csv");
    std::fs::write(&bad, "label,f_1,f_2,f_3\n1,0,0,0\n0,5,5,5\n").unwrap();
    let cfg = dir.path().join("config.json");
    let o = fci(&[
        "predict",
        "--config",
        cfg.to_str().unwrap(),
        "--test",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("features"));
    assert!(!out.join("predictions/pvalues_wide.csv").exists());
}

#[test]
fn predict_accepts_external_test_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(dir.path(), "run");
    let ext = dir.path().join("extra.csv");
    std::fs::write(&ext, "label,f_1,f_2\n1,0.1,-0.2\n0,30,30\n").unwrap();
    let cfg = dir.path().join("config.json");
    let o = fci(&[
        "predict",
        "--config",
        cfg.to_str().unwrap(),
        "--test",
        ext.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sets = std::fs::read_to_string(out.join("predictions/sets_extra.csv")).unwrap();
    assert_eq!(sets.lines().nth(2).unwrap(), "1,OUTLIER");
}

#[test]
fn exit_codes() {
    assert_eq!(fci(&["--help"]).status.code(), Some(0));
    assert_eq!(fci(&["--version"]).status.code(), Some(0));
    assert_eq!(fci(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(
        fci(&["train", "--p-value-mode", "bogus"]).status.code(),
        Some(1)
    );

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let cfg = write_config(dir.path(), &small_config(&out));
    let c = cfg.to_str().unwrap();
    assert_eq!(
        fci(&["gen-data", "--config", c, "--alpha", "1.5"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        fci(&["gen-data", "--config", c, "--contamination-rate", "1.0"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        fci(&["gen-data", "--config", "/nonexistent/cfg.json"])
            .status
            .code(),
        Some(1)
    );

    let mut broken = small_config(&out);
    broken["model"]["unknown_field"] = json!(1);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, broken.to_string()).unwrap();
    assert_eq!(
        fci(&["gen-data", "--config", bad.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
}

fn idx_images(n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut b = vec![];
    for v in [0x803u32, n as u32, rows as u32, cols as u32] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    b.extend_from_slice(pixels);
    b
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut b = vec![];
    for v in [0x801u32, labels.len() as u32] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    b.extend_from_slice(labels);
    b
}

#[test]
fn idx_source_holds_out_a_class() {
    let dir = tempfile::tempdir().unwrap();
    // 3 digit classes of 2x2 images, 40 each; class index 2 (label 3) is held out
    let mut pixels = vec![];
    let mut labels = vec![];
    for i in 0..120usize {
        let l = (i % 3) as u8;
        let base = 60 * l as usize + 20;
        for k in 0..4 {
            pixels.push((base + (i * 7 + k * 13) % 40) as u8);
        }
        labels.push(l);
    }
    let img = dir.path().join("img.idx");
    let lab = dir.path().join("lab.idx");
    std::fs::write(&img, idx_images(120, 2, 2, &pixels)).unwrap();
    std::fs::write(&lab, idx_labels(&labels)).unwrap();

    let out = dir.path().join("idx");
    let mut cfg = small_config(&out);
    cfg["dataset"]["source"] = json!({
        "kind": "idx", "images": img, "labels": lab, "holdout_class": 3, "max_per_class": 30
    });
    let cfg_path = write_config(dir.path(), &cfg);
    let o = fci(&["gen-data", "--config", cfg_path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let meta: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("data/meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta, json!({"n_classes": 2, "dim": 4}));
    let test = std::fs::read_to_string(out.join("data/test_0.1.csv")).unwrap();
    // 12 inliers and round(0.1 * 12 / 0.9) = 1 outlier
    assert_eq!(test.lines().count() - 1, 13);
    assert_eq!(
        test.lines().skip(1).filter(|l| l.starts_with("0,")).count(),
        1
    );
}
