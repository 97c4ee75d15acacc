//! The four training objectives, each built on a [`Tape`] so the training
//! loop and the plain evaluators share one code path.

use super::model::{ClassFlowModel, HeadFeatures};
use crate::autodiff::{BoundMlp, Tape, Tensor, Var};
use crate::kernels::{self, KernelSpec};
use crate::{Error, Result};

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before any log.
pub const PROB_EPS: f64 = 1e-7;

fn clamp_prob(tape: &mut Tape, p: Var) -> Var {
    tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS)
}

/// `-mean(log p_pos) - mean(log(1 - p_neg))`.
///
/// This is the discriminator loss when `p_pos = D(X)` and `p_neg = D(G(Z))`,
/// and the fine-tuning loss when the probabilities come from the class head.
pub(crate) fn binary_log_loss(tape: &mut Tape, p_pos: Var, p_neg: Var) -> Var {
    let pos = clamp_prob(tape, p_pos);
    let log_pos = tape.log(pos);
    let mean_pos = tape.mean(log_pos);
    let neg = clamp_prob(tape, p_neg);
    let one_minus = tape.one_minus(neg);
    let log_neg = tape.log(one_minus);
    let mean_neg = tape.mean(log_neg);
    let total = tape.add(mean_pos, mean_neg).expect("scalars");
    tape.scale(total, -1.0)
}

/// Non-saturating generator loss `-mean(log D(G(Z)))`.
pub(crate) fn generator_loss(tape: &mut Tape, d_fake: Var) -> Var {
    let p = clamp_prob(tape, d_fake);
    let l = tape.log(p);
    let m = tape.mean(l);
    tape.scale(m, -1.0)
}

/// `mean |X - G(I(X))| + mean |Z - I(G(Z))|`.
pub(crate) fn cycle_loss(
    tape: &mut Tape,
    x: Var,
    x_roundtrip: Var,
    z: Var,
    z_roundtrip: Var,
) -> Result<Var> {
    let dx = tape.sub(x, x_roundtrip)?;
    let nx = tape.row_norm(dx)?;
    let mx = tape.mean(nx);
    let dz = tape.sub(z, z_roundtrip)?;
    let nz = tape.row_norm(dz)?;
    let mz = tape.mean(nz);
    tape.add(mx, mz)
}

fn non_empty(name: &str, t: &Tensor) -> Result<()> {
    if t.shape().len() != 2 || t.rows() == 0 {
        return Err(Error::InsufficientData(format!("{name} batch is empty")));
    }
    Ok(())
}

pub(crate) struct Bound {
    pub g: BoundMlp,
    pub i: BoundMlp,
    pub d: BoundMlp,
    pub h: BoundMlp,
}

pub(crate) fn bind_all(model: &ClassFlowModel, tape: &mut Tape) -> Bound {
    Bound {
        g: model.generator.bind(tape),
        i: model.inverse.bind(tape),
        d: model.discriminator.bind(tape),
        h: model.head.bind(tape),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanLosses {
    /// `-mean[log D(X) + log(1 - D(G(Z)))]`, minimized by the discriminator.
    pub d_loss: f64,
    /// `-mean[log D(G(Z))]`, minimized by the generator.
    pub g_loss: f64,
}

pub fn loss_forward_gan(model: &ClassFlowModel, real: &Tensor, z: &Tensor) -> Result<GanLosses> {
    non_empty("real", real)?;
    non_empty("latent", z)?;
    let mut tape = Tape::new();
    let b = bind_all(model, &mut tape);
    let x = tape.leaf(real.clone());
    let zv = tape.leaf(z.clone());
    let fake = model.generator.forward_bound(&mut tape, &b.g, zv)?;
    let d_real = model.discriminator.forward_bound(&mut tape, &b.d, x)?;
    let d_fake = model.discriminator.forward_bound(&mut tape, &b.d, fake)?;
    let d_loss = binary_log_loss(&mut tape, d_real, d_fake);
    let g_loss = generator_loss(&mut tape, d_fake);
    Ok(GanLosses {
        d_loss: tape.scalar(d_loss),
        g_loss: tape.scalar(g_loss),
    })
}

/// Unbiased squared MMD between `I(real)` and a latent sample `z`.
pub fn loss_backward_mmd(
    model: &ClassFlowModel,
    real: &Tensor,
    z: &Tensor,
    kernel: &KernelSpec,
) -> Result<f64> {
    if real.rows() < 2 {
        return Err(Error::InsufficientData(format!(
            "MMD loss needs a batch of at least 2, got {}",
            real.rows()
        )));
    }
    let latent = model.encode(real)?;
    Ok(kernels::mmd2_unbiased(&latent, z, kernel)?.value)
}

pub fn loss_cycle(model: &ClassFlowModel, real: &Tensor, z: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let b = bind_all(model, &mut tape);
    let x = tape.leaf(real.clone());
    let zv = tape.leaf(z.clone());
    let ix = model.inverse.forward_bound(&mut tape, &b.i, x)?;
    let gix = model.generator.forward_bound(&mut tape, &b.g, ix)?;
    let gz = model.generator.forward_bound(&mut tape, &b.g, zv)?;
    let igz = model.inverse.forward_bound(&mut tape, &b.i, gz)?;
    let c = cycle_loss(&mut tape, x, gix, zv, igz)?;
    Ok(tape.scalar(c))
}

/// `-mean[log h(I(X_pos))] - mean[log(1 - h(I(X_neg)))]`; minimizing it
/// maximizes the class-separation objective.
pub fn loss_pred_finetune(model: &ClassFlowModel, pos: &Tensor, neg: &Tensor) -> Result<f64> {
    non_empty("positive", pos)?;
    non_empty("negative", neg)?;
    let mut tape = Tape::new();
    let b = bind_all(model, &mut tape);
    let l = pred_loss_on_tape(model, &mut tape, &b, pos, neg)?;
    Ok(tape.scalar(l))
}

pub(crate) fn pred_loss_on_tape(
    model: &ClassFlowModel,
    tape: &mut Tape,
    b: &Bound,
    pos: &Tensor,
    neg: &Tensor,
) -> Result<Var> {
    let xp = tape.leaf(pos.clone());
    let xn = tape.leaf(neg.clone());
    let zp = model.inverse.forward_bound(tape, &b.i, xp)?;
    let zn = model.inverse.forward_bound(tape, &b.i, xn)?;
    let (fp, fn_) = match model.head_features {
        HeadFeatures::Linear => (zp, zn),
        HeadFeatures::Radial => (tape.row_sq_norm(zp)?, tape.row_sq_norm(zn)?),
    };
    let hp = model.head.forward_bound(tape, &b.h, fp)?;
    let hn = model.head.forward_bound(tape, &b.h, fn_)?;
    Ok(binary_log_loss(tape, hp, hn))
}
