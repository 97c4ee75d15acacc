//! Finite-difference gradient checks on random small networks.
#![allow(clippy::needless_range_loop)]

use fci_core::autodiff::{Activation, BoundMlp, Mlp, MlpSpec, Tape, Tensor, Var};
use fci_core::rng;
use rand::Rng;

const H: f64 = 1e-6;
const TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
enum Loss {
    Mean,
    SoftmaxXent,
    BinaryLog,
    Mmd,
    Cycle,
    RadialHead,
}

const LOSSES: [Loss; 6] = [
    Loss::Mean,
    Loss::SoftmaxXent,
    Loss::BinaryLog,
    Loss::Mmd,
    Loss::Cycle,
    Loss::RadialHead,
];

pub struct Case {
    nets: Vec<Mlp>,
    x: Tensor,
    other: Tensor,
    targets: Vec<usize>,
    loss: Loss,
}

fn log_mean(tape: &mut Tape, p: Var, complement: bool) -> Var {
    let p = tape.clamp(p, 1e-7, 1.0 - 1e-7);
    let p = if complement { tape.one_minus(p) } else { p };
    let l = tape.log(p);
    tape.mean(l)
}

fn build(case: &Case, tape: &mut Tape) -> (Var, Var, Vec<BoundMlp>) {
    let bound: Vec<BoundMlp> = case.nets.iter().map(|n| n.bind(tape)).collect();
    let x = tape.leaf(case.x.clone());
    let net = &case.nets[0];
    let y = net.forward_bound(tape, &bound[0], x).unwrap();
    let loss = match case.loss {
        Loss::Mean => {
            let sq = tape.mul(y, y).unwrap();
            let s = tape.add(sq, y).unwrap();
            tape.mean(s)
        }
        Loss::SoftmaxXent => tape.softmax_cross_entropy(y, &case.targets).unwrap(),
        Loss::BinaryLog => {
            let o = tape.leaf(case.other.clone());
            let yo = net.forward_bound(tape, &bound[0], o).unwrap();
            let p_pos = tape.activation(y, Activation::Sigmoid);
            let p_neg = tape.activation(yo, Activation::Sigmoid);
            let a = log_mean(tape, p_pos, false);
            let b = log_mean(tape, p_neg, true);
            let s = tape.add(a, b).unwrap();
            tape.scale(s, -1.0)
        }
        Loss::Mmd => {
            let v = tape.leaf(case.other.clone());
            tape.mmd2(y, v, 1.3).unwrap()
        }
        Loss::Cycle => {
            let g = &case.nets[1];
            let z = tape.leaf(case.other.clone());
            let gy = g.forward_bound(tape, &bound[1], y).unwrap();
            let gz = g.forward_bound(tape, &bound[1], z).unwrap();
            let igz = net.forward_bound(tape, &bound[0], gz).unwrap();
            let dx = tape.sub(x, gy).unwrap();
            let nx = tape.row_norm(dx).unwrap();
            let mx = tape.mean(nx);
            let dz = tape.sub(z, igz).unwrap();
            let nz = tape.row_norm(dz).unwrap();
            let mz = tape.mean(nz);
            tape.add(mx, mz).unwrap()
        }
        Loss::RadialHead => {
            let r = tape.row_sq_norm(y).unwrap();
            let h = case.nets[1].forward_bound(tape, &bound[1], r).unwrap();
            let a = log_mean(tape, h, false);
            tape.scale(a, -1.0)
        }
    };
    (loss, x, bound)
}

fn value(case: &Case) -> f64 {
    let mut tape = Tape::new();
    let (l, _, _) = build(case, &mut tape);
    tape.scalar(l)
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

pub fn random_tensor(r: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(
        vec![rows, cols],
        (0..rows * cols)
            .map(|_| r.random_range(-1.5..1.5))
            .collect(),
    )
    .unwrap()
}

// Zero-initialized biases can put a relu exactly on its kink; jitter them.
fn jitter_biases(net: &mut Mlp, r: &mut impl Rng) {
    for (j, t) in net.params_mut().tensors_mut().iter_mut().enumerate() {
        if j % 2 == 1 {
            t.data_mut()
                .iter_mut()
                .for_each(|b| *b = r.random_range(-0.5..0.5));
        }
    }
}

pub fn make_case(k: usize) -> Case {
    let mut r = rng::seeded(1000 + k as u64);
    let loss = LOSSES[k % LOSSES.len()];
    let hidden = Activation::ALL[k % 5];
    let last = Activation::ALL[(k / 5) % 5];
    let p = r.random_range(2..4);
    let depth = r.random_range(1..3);
    let mut widths = vec![p];
    widths.extend((0..depth).map(|_| r.random_range(2..5)));
    let out = match loss {
        Loss::Cycle => p,
        Loss::SoftmaxXent => 3,
        Loss::BinaryLog => 1,
        _ => r.random_range(1..3),
    };
    widths.push(out);
    let spec = MlpSpec::uniform(&widths, hidden, last).unwrap();
    let mut nets = vec![Mlp::new(spec, &mut r).unwrap()];
    match loss {
        Loss::Cycle => {
            let spec = MlpSpec::uniform(
                &[out, 3, p],
                Activation::ALL[(k + 2) % 5],
                Activation::Identity,
            )
            .unwrap();
            nets.push(Mlp::new(spec, &mut r).unwrap());
        }
        Loss::RadialHead => {
            let spec = MlpSpec::new(vec![1, 1], vec![], Activation::Sigmoid).unwrap();
            nets.push(Mlp::new(spec, &mut r).unwrap());
        }
        _ => {}
    }
    for net in &mut nets {
        jitter_biases(net, &mut r);
    }
    let m = r.random_range(3..6);
    let other = match loss {
        Loss::Mmd => random_tensor(&mut r, m + 1, out),
        Loss::Cycle => random_tensor(&mut r, m, out),
        _ => random_tensor(&mut r, m, p),
    };
    Case {
        nets,
        x: random_tensor(&mut r, m, p),
        other,
        targets: (0..m).map(|i| i % 3).collect(),
        loss,
    }
}

pub fn check(mut case: Case, k: usize) -> Result<(), String> {
    let mut tape = Tape::new();
    let (l, x, bound) = build(&case, &mut tape);
    let grads = tape.backward(l).unwrap();

    let analytic_x = grads
        .wrt(x)
        .map(|g| g.data().to_vec())
        .unwrap_or(vec![0.0; case.x.len()]);
    for e in 0..case.x.len() {
        let orig = case.x.data()[e];
        case.x.data_mut()[e] = orig + H;
        let up = value(&case);
        case.x.data_mut()[e] = orig - H;
        let down = value(&case);
        case.x.data_mut()[e] = orig;
        let numeric = (up - down) / (2.0 * H);
        if rel_err(analytic_x[e], numeric) >= TOL {
            return Err(format!(
                "case {k} {:?} input {e}: {} vs {numeric}",
                case.loss, analytic_x[e]
            ));
        }
    }

    for (n, b) in bound.iter().enumerate() {
        for (j, var) in b.vars().iter().enumerate() {
            let analytic = grads.wrt(*var).map(|g| g.data().to_vec());
            let size = case.nets[n].params().tensors()[j].len();
            let analytic = analytic.unwrap_or(vec![0.0; size]);
            for e in 0..size {
                let orig = case.nets[n].params().tensors()[j].data()[e];
                case.nets[n].params_mut().tensors_mut()[j].data_mut()[e] = orig + H;
                let up = value(&case);
                case.nets[n].params_mut().tensors_mut()[j].data_mut()[e] = orig - H;
                let down = value(&case);
                case.nets[n].params_mut().tensors_mut()[j].data_mut()[e] = orig;
                let numeric = (up - down) / (2.0 * H);
                if rel_err(analytic[e], numeric) >= TOL {
                    return Err(format!(
                        "case {k} {:?} net {n} tensor {j} entry {e}: {} vs {numeric}",
                        case.loss, analytic[e]
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Run every case; the triples record (hidden activation, output activation, loss) coverage.
pub fn check_all(n: usize) -> Result<Vec<(usize, usize, usize)>, String> {
    (0..n)
        .map(|k| {
            check(make_case(k), k)?;
            Ok((k % 5, (k / 5) % 5, k % LOSSES.len()))
        })
        .collect()
}
