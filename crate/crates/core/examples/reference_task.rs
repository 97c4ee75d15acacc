//! Train FCI and both baselines on the three-class Gaussian task and print
//! reports at 0%, 5% and 10% contamination.
//!
//! cargo run --release -p fci-core --example reference_task -- [seed]

use std::time::Instant;

use fci_core::baselines::ClassifierConfig;
use fci_core::datasets::{
    gen_gaussian_classes, inject_contamination, reference_outliers, reference_spec, split,
    ContaminationSpec, SplitFractions,
};
use fci_core::pipeline::{fit_baselines, fit_fci, BaselineMethod, FciConfig};

fn main() -> fci_core::Result<()> {
    env_logger::init();
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let data = gen_gaussian_classes(&reference_spec(2500, seed))?;
    let (train, cal, test) = split(&data, SplitFractions::new(0.4, 0.4, 0.2)?, seed)?;

    let mut config = FciConfig::new(2)?;
    config.train.seed = seed;
    if let Ok(w) = std::env::var("W_PRED") {
        config.train.w_pred = w.parse().unwrap();
    }
    if let Ok(e) = std::env::var("EPOCHS") {
        config.train.epochs = e.parse().unwrap();
    }
    let start = Instant::now();
    let fci = fit_fci(&train.concat(&cal)?, &config)?;
    println!("fci trained in {:.1?}", start.elapsed());
    for (k, t) in fci.traces.iter().enumerate() {
        let last = t.epochs() - 1;
        println!(
            "class {}: mmd {:.4} -> {:.4}, cycle {:.3} -> {:.3}, d {:.3}, g {:.3}",
            k + 1,
            t.mmd[0],
            t.mmd[last],
            t.cycle[0],
            t.cycle[last],
            t.d_loss[last],
            t.g_loss[last]
        );
    }
    for (k, m) in fci.models.iter().enumerate() {
        let x = fci
            .normalizer
            .as_ref()
            .unwrap()
            .transform(&test.class_features(k + 1)?)?;
        let z = m.encode(&x)?;
        let n = z.rows() as f64;
        let stats: Vec<(f64, f64)> = (0..z.cols())
            .map(|j| {
                let mean = z.iter_rows().map(|r| r[j]).sum::<f64>() / n;
                let var = z.iter_rows().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
                (mean, var)
            })
            .collect();
        println!("class {} latent mean/var {:?}", k + 1, stats);
    }
    let base = fit_baselines(
        &train,
        &cal,
        &ClassifierConfig {
            seed,
            ..Default::default()
        },
        config.conformal.alpha,
        true,
    )?;

    for rate in [0.0, 0.05, 0.10] {
        let contaminated = inject_contamination(
            &test,
            &ContaminationSpec {
                rate,
                source: reference_outliers(),
                seed: seed + 1000,
            },
        )?;
        let r = fci.evaluate(&contaminated, &config.conformal)?;
        println!("rate {rate}: fci {}", serde_json::to_string(&r).unwrap());
        for m in [BaselineMethod::Scaling, BaselineMethod::Aps] {
            let r = base.evaluate(&contaminated, m)?;
            println!(
                "rate {rate}: {m:?} coverage {:.4} size {:.4}",
                r.coverage, r.size_error_excess
            );
        }
    }
    Ok(())
}
