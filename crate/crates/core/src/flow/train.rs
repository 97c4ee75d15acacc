use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::losses::{binary_log_loss, bind_all, cycle_loss, generator_loss, pred_loss_on_tape};
use super::model::{ClassFlowModel, FlowSpec};
use crate::autodiff::{Adam, AdamConfig, Tape, Tensor};
use crate::kernels::{self, KernelSpec};
use crate::rng::{self, Rng};
use crate::{par, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Generator and inverse networks, and the fine-tuning step.
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub w_gan: f64,
    pub w_mmd: f64,
    pub w_cycle: f64,
    pub w_pred: f64,
    pub d_steps: usize,
    pub seed: u64,
    pub kernel: KernelSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            lr_generator: 1e-3,
            lr_discriminator: 1e-3,
            w_gan: 1.0,
            w_mmd: 1.0,
            w_cycle: 1.0,
            w_pred: 1.0,
            d_steps: 1,
            seed: 0,
            kernel: KernelSpec::MedianHeuristic,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!(
                "batch size must be at least 2, got {}",
                self.batch_size
            ));
        }
        if self.d_steps == 0 {
            return bad("discriminator steps must be at least 1".into());
        }
        for (name, lr) in [
            ("lr_generator", self.lr_generator),
            ("lr_discriminator", self.lr_discriminator),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        for (name, w) in [
            ("w_gan", self.w_gan),
            ("w_mmd", self.w_mmd),
            ("w_cycle", self.w_cycle),
            ("w_pred", self.w_pred),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("{name} must be non-negative, got {w}"));
            }
        }
        self.kernel.validate()
    }
}

/// Epoch averages of every tracked loss; each vector has one entry per epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub d_loss: Vec<f64>,
    pub g_loss: Vec<f64>,
    pub mmd: Vec<f64>,
    pub cycle: Vec<f64>,
    /// Zero for epochs without fine-tuning (no negatives or `w_pred = 0`).
    pub pred: Vec<f64>,
    pub bandwidth: Vec<f64>,
}

impl LossTrace {
    pub fn epochs(&self) -> usize {
        self.d_loss.len()
    }
}

#[derive(Default)]
struct EpochSums {
    d: f64,
    g: f64,
    mmd: f64,
    cycle: f64,
    pred: f64,
    iterations: usize,
}

fn check_finite(value: f64, what: &'static str, epoch: usize, iteration: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            what,
            epoch,
            iteration,
        })
    }
}

fn epoch_bandwidth(
    model: &ClassFlowModel,
    batch: &Tensor,
    kernel: &KernelSpec,
    rng: &mut Rng,
) -> Result<f64> {
    match kernel {
        KernelSpec::Fixed { bandwidth } => Ok(*bandwidth),
        KernelSpec::MedianHeuristic => {
            let z = rng::standard_normal(rng, batch.rows(), model.latent.dim);
            let pooled = model.encode(batch)?.vstack(&z)?;
            match kernels::median_bandwidth(&pooled) {
                Ok(bw) => Ok(bw),
                Err(Error::DegenerateBandwidth) => Ok(1.0),
                Err(e) => Err(e),
            }
        }
    }
}

/// Train the roundtrip model for one class.
///
/// Each minibatch runs `d_steps` discriminator updates, one joint update of
/// generator and inverse on `w_gan * g_loss + w_mmd * mmd + w_cycle * cycle`,
/// and, when `others` is given, one fine-tuning update of inverse and head
/// against an equally sized random batch of other-class inputs.
pub fn train_class_flow(
    class_label: usize,
    data: &Tensor,
    others: Option<&Tensor>,
    spec: &FlowSpec,
    config: &TrainConfig,
) -> Result<(ClassFlowModel, LossTrace)> {
    config.validate()?;
    let n = data.rows();
    let b = config.batch_size;
    if n < 2 * b {
        return Err(Error::InsufficientData(format!(
            "class {class_label} has {n} samples, needs at least {} (twice the batch size)",
            2 * b
        )));
    }
    if let Some(o) = others {
        if o.cols() != data.cols() {
            return Err(Error::Shape(format!(
                "negative samples have {} features, class data has {}",
                o.cols(),
                data.cols()
            )));
        }
    }
    let others = others.filter(|o| o.rows() > 0 && config.w_pred > 0.0);

    let mut rng = rng::seeded(config.seed);
    let mut model = ClassFlowModel::new(class_label, data.cols(), spec, &mut rng)?;
    let d = model.latent.dim;
    let gen_cfg = AdamConfig::with_lr(config.lr_generator);
    let mut adam_g = Adam::new(gen_cfg, model.generator.params());
    let mut adam_i = Adam::new(gen_cfg, model.inverse.params());
    let mut adam_d = Adam::new(
        AdamConfig::with_lr(config.lr_discriminator),
        model.discriminator.params(),
    );
    let mut adam_i_ft = Adam::new(gen_cfg, model.inverse.params());
    let mut adam_h = Adam::new(gen_cfg, model.head.params());

    let mut trace = LossTrace::default();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let first = data.select_rows(&order[..b])?;
        let bandwidth = epoch_bandwidth(&model, &first, &config.kernel, &mut rng)?;
        let mut sums = EpochSums::default();

        for (it, idx) in order.chunks_exact(b).enumerate() {
            let xb = data.select_rows(idx)?;

            for _ in 0..config.d_steps {
                let z = rng::standard_normal(&mut rng, b, d);
                let mut tape = Tape::new();
                let g_bound = model.generator.bind(&mut tape);
                let d_bound = model.discriminator.bind(&mut tape);
                let x = tape.leaf(xb.clone());
                let zv = tape.leaf(z);
                let fake = model.generator.forward_bound(&mut tape, &g_bound, zv)?;
                let d_real = model.discriminator.forward_bound(&mut tape, &d_bound, x)?;
                let d_fake = model
                    .discriminator
                    .forward_bound(&mut tape, &d_bound, fake)?;
                let loss = binary_log_loss(&mut tape, d_real, d_fake);
                sums.d += check_finite(tape.scalar(loss), "discriminator loss", epoch, it)?
                    / config.d_steps as f64;
                let grads = tape.backward(loss)?;
                model.discriminator.accumulate_grads(&grads, &d_bound);
                adam_d.step(model.discriminator.params_mut());
            }

            {
                let z = rng::standard_normal(&mut rng, b, d);
                let z_ref = rng::standard_normal(&mut rng, b, d);
                let mut tape = Tape::new();
                let bound = bind_all(&model, &mut tape);
                let x = tape.leaf(xb.clone());
                let zv = tape.leaf(z);
                let zr = tape.leaf(z_ref);
                let fake = model.generator.forward_bound(&mut tape, &bound.g, zv)?;
                let d_fake = model
                    .discriminator
                    .forward_bound(&mut tape, &bound.d, fake)?;
                let g_loss = generator_loss(&mut tape, d_fake);
                let ix = model.inverse.forward_bound(&mut tape, &bound.i, x)?;
                let mmd = tape.mmd2(ix, zr, bandwidth)?;
                let gix = model.generator.forward_bound(&mut tape, &bound.g, ix)?;
                let igz = model.inverse.forward_bound(&mut tape, &bound.i, fake)?;
                let cyc = cycle_loss(&mut tape, x, gix, zv, igz)?;

                sums.g += check_finite(tape.scalar(g_loss), "generator loss", epoch, it)?;
                sums.mmd += check_finite(tape.scalar(mmd), "MMD loss", epoch, it)?;
                sums.cycle += check_finite(tape.scalar(cyc), "cycle loss", epoch, it)?;

                let a = tape.scale(g_loss, config.w_gan);
                let m = tape.scale(mmd, config.w_mmd);
                let c = tape.scale(cyc, config.w_cycle);
                let am = tape.add(a, m)?;
                let total = tape.add(am, c)?;
                let grads = tape.backward(total)?;
                model.generator.accumulate_grads(&grads, &bound.g);
                model.inverse.accumulate_grads(&grads, &bound.i);
                adam_g.step(model.generator.params_mut());
                adam_i.step(model.inverse.params_mut());
            }

            if let Some(other) = others {
                let neg_idx = if other.rows() >= b {
                    index::sample(&mut rng, other.rows(), b).into_vec()
                } else {
                    (0..b).map(|_| rng.random_range(0..other.rows())).collect()
                };
                let neg = other.select_rows(&neg_idx)?;
                let mut tape = Tape::new();
                let bound = bind_all(&model, &mut tape);
                let loss = pred_loss_on_tape(&model, &mut tape, &bound, &xb, &neg)?;
                sums.pred += check_finite(tape.scalar(loss), "fine-tuning loss", epoch, it)?;
                let weighted = tape.scale(loss, config.w_pred);
                let grads = tape.backward(weighted)?;
                model.inverse.accumulate_grads(&grads, &bound.i);
                model.head.accumulate_grads(&grads, &bound.h);
                adam_i_ft.step(model.inverse.params_mut());
                adam_h.step(model.head.params_mut());
            }
            sums.iterations += 1;
        }

        let k = sums.iterations as f64;
        trace.d_loss.push(sums.d / k);
        trace.g_loss.push(sums.g / k);
        trace.mmd.push(sums.mmd / k);
        trace.cycle.push(sums.cycle / k);
        trace.pred.push(sums.pred / k);
        trace.bandwidth.push(bandwidth);
        log::debug!(
            "class {class_label} epoch {}: d {:.4} g {:.4} mmd {:.5} cycle {:.4} pred {:.4}",
            epoch + 1,
            sums.d / k,
            sums.g / k,
            sums.mmd / k,
            sums.cycle / k,
            sums.pred / k
        );
    }
    if !model.generator.params().is_finite() || !model.inverse.params().is_finite() {
        return Err(Error::NonFinite {
            what: "parameters",
            epoch: config.epochs,
            iteration: 0,
        });
    }
    model.mark_trained();
    Ok((model, trace))
}

/// Train one model per class `1..=n_classes`, in parallel when enabled.
/// Class `l` uses seed `config.seed + l` and every other class as negatives.
pub fn train_classes(
    features: &Tensor,
    labels: &[usize],
    n_classes: usize,
    spec: &FlowSpec,
    config: &TrainConfig,
) -> Result<Vec<(ClassFlowModel, LossTrace)>> {
    if features.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} labels",
            features.rows(),
            labels.len()
        )));
    }
    config.validate()?;
    let rows_where = |pred: &dyn Fn(usize) -> bool| -> Vec<usize> {
        labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| pred(l))
            .map(|(i, _)| i)
            .collect()
    };
    par::try_map_range(n_classes, |k| {
        let class = k + 1;
        let own = rows_where(&|l| l == class);
        if own.is_empty() {
            return Err(Error::InsufficientData(format!(
                "class {class} has no training samples"
            )));
        }
        let other_idx = rows_where(&|l| l != class);
        let data = features.select_rows(&own)?;
        let others = if other_idx.is_empty() {
            None
        } else {
            Some(features.select_rows(&other_idx)?)
        };
        let cfg = TrainConfig {
            seed: config.seed.wrapping_add(class as u64),
            ..config.clone()
        };
        train_class_flow(class, &data, others.as_ref(), spec, &cfg)
    })
}
