//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its value and the handles of its
//! inputs. Since inputs always precede outputs, walking the tape backwards
//! from the loss visits nodes in a valid topological order.

use super::mlp::Activation;
use super::tensor::{matmul, matmul_a_bt, matmul_at_b, Tensor};
use crate::kernels;
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Act(Var, Activation),
    Log(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    RowNorm(Var),
    RowSqNorm(Var),
    Mmd2(Var, Var, f64),
    SoftmaxXent(Var, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradient of one scalar with respect to every node that influenced it.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when `var` does not feed into the loss.
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn rank2(op: &str, t: &Tensor) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "{op}: expected a matrix, got {:?}",
            t.shape()
        )));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a shape-`[1]` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Input, constant or parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = rank2("matmul", self.value(a))?;
        let (k2, n) = rank2("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::Shape(format!("matmul: ({m}x{k}) * ({k2}x{n})")));
        }
        let out = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::from_vec(vec![m, n], out)?, Op::MatMul(a, b)))
    }

    /// Adds a `1 x n` row to every row of an `m x n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = rank2("add_row", self.value(a))?;
        let r = self.value(row);
        if r.len() != n {
            return Err(Error::Shape(format!("add_row: {m}x{n} + {:?}", r.shape())));
        }
        let rd = r.data().to_vec();
        let mut out = self.value(a).data().to_vec();
        for chunk in out.chunks_exact_mut(n) {
            for (o, b) in chunk.iter_mut().zip(&rd) {
                *o += b;
            }
        }
        Ok(self.push(Tensor::from_vec(vec![m, n], out)?, Op::AddRow(a, row)))
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        same_shape(name, self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::from_vec(shape, data)?, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| c * x);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddConst(a))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_const(neg, 1.0)
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Var {
        if act == Activation::Identity {
            return a;
        }
        let v = self.value(a).map(|x| act.apply(x));
        self.push(v, Op::Act(a, act))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a))
    }

    /// Clamp into `[lo, hi]`; gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.sum() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Euclidean norm of each row, as an `m x 1` column.
    pub fn row_norm(&mut self, a: Var) -> Result<Var> {
        let (m, _) = rank2("row_norm", self.value(a))?;
        let out = self
            .value(a)
            .iter_rows()
            .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        Ok(self.push(Tensor::from_vec(vec![m, 1], out)?, Op::RowNorm(a)))
    }

    /// Squared Euclidean norm of each row, as an `m x 1` column.
    pub fn row_sq_norm(&mut self, a: Var) -> Result<Var> {
        let (m, _) = rank2("row_sq_norm", self.value(a))?;
        let out = self
            .value(a)
            .iter_rows()
            .map(|r| r.iter().map(|x| x * x).sum::<f64>())
            .collect();
        Ok(self.push(Tensor::from_vec(vec![m, 1], out)?, Op::RowSqNorm(a)))
    }

    /// Unbiased squared MMD between the rows of `u` and `v` under a Gaussian
    /// kernel of fixed `bandwidth`. The value is computed by
    /// [`kernels::mmd2_unbiased_value`], so it matches the plain estimator exactly.
    pub fn mmd2(&mut self, u: Var, v: Var, bandwidth: f64) -> Result<Var> {
        let value = kernels::mmd2_unbiased_value(self.value(u), self.value(v), bandwidth)?;
        Ok(self.push(Tensor::scalar(value), Op::Mmd2(u, v, bandwidth)))
    }

    /// Mean cross-entropy of row-wise softmax over `logits` against class
    /// indices `targets` (0-based).
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, n) = rank2("softmax_cross_entropy", self.value(logits))?;
        if targets.len() != m {
            return Err(Error::Shape(format!(
                "softmax_cross_entropy: {m} rows, {} targets",
                targets.len()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= n) {
            return Err(Error::Shape(format!(
                "target {t} out of range for {n} classes"
            )));
        }
        let mut loss = 0.0;
        for (row, &t) in self.value(logits).iter_rows().zip(targets) {
            loss -= log_softmax(row)[t];
        }
        Ok(self.push(
            Tensor::scalar(loss / m as f64),
            Op::SoftmaxXent(logits, targets.to_vec()),
        ))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(g).for_each(|(e, x)| *e += x),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let (m, k) = (av.shape()[0], av.shape()[1]);
                    let n = bv.shape()[1];
                    acc(&mut grads, *a, matmul_a_bt(&g, bv.data(), m, k, n));
                    acc(&mut grads, *b, matmul_at_b(av.data(), &g, m, k, n));
                }
                Op::AddRow(a, row) => {
                    let n = self.value(*row).len();
                    let mut gr = vec![0.0; n];
                    for chunk in g.chunks_exact(n) {
                        gr.iter_mut().zip(chunk).for_each(|(r, x)| *r += x);
                    }
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.iter().map(|x| -x).collect());
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    acc(
                        &mut grads,
                        *a,
                        g.iter().zip(bv).map(|(x, y)| x * y).collect(),
                    );
                    acc(
                        &mut grads,
                        *b,
                        g.iter().zip(av).map(|(x, y)| x * y).collect(),
                    );
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g.iter().map(|x| c * x).collect()),
                Op::AddConst(a) => acc(&mut grads, *a, g),
                Op::Act(a, act) => {
                    let x = self.value(*a).data();
                    let y = node.value.data();
                    let ga = g
                        .iter()
                        .zip(x.iter().zip(y))
                        .map(|(gi, (&xi, &yi))| gi * act.derivative(xi, yi))
                        .collect();
                    acc(&mut grads, *a, ga);
                }
                Op::Log(a) => {
                    let x = self.value(*a).data();
                    acc(
                        &mut grads,
                        *a,
                        g.iter().zip(x).map(|(gi, xi)| gi / xi).collect(),
                    );
                }
                Op::Clamp(a, lo, hi) => {
                    let x = self.value(*a).data();
                    let ga = g
                        .iter()
                        .zip(x)
                        .map(|(gi, &xi)| if xi < *lo || xi > *hi { 0.0 } else { *gi })
                        .collect();
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    acc(&mut grads, *a, vec![g[0]; n]);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    acc(&mut grads, *a, vec![g[0] / n as f64; n]);
                }
                Op::RowNorm(a) => {
                    let x = self.value(*a);
                    let norms = node.value.data();
                    let c = x.cols();
                    let mut ga = vec![0.0; x.len()];
                    for (r, (row, &nrm)) in x.iter_rows().zip(norms).enumerate() {
                        // Subgradient 0 at the origin.
                        if nrm > 0.0 {
                            for (j, &xj) in row.iter().enumerate() {
                                ga[r * c + j] = g[r] * xj / nrm;
                            }
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::RowSqNorm(a) => {
                    let x = self.value(*a);
                    let c = x.cols();
                    let ga = x
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(idx, &xj)| 2.0 * g[idx / c] * xj)
                        .collect();
                    acc(&mut grads, *a, ga);
                }
                Op::Mmd2(u, v, bw) => {
                    let (gu, gv) =
                        kernels::mmd2_unbiased_grad(self.value(*u), self.value(*v), *bw)?;
                    acc(&mut grads, *u, gu.into_iter().map(|x| g[0] * x).collect());
                    acc(&mut grads, *v, gv.into_iter().map(|x| g[0] * x).collect());
                }
                Op::SoftmaxXent(logits, targets) => {
                    let lv = self.value(*logits);
                    let m = lv.rows();
                    let n = lv.cols();
                    let mut ga = Vec::with_capacity(m * n);
                    for (row, &t) in lv.iter_rows().zip(targets) {
                        let p = softmax(row);
                        for (j, pj) in p.into_iter().enumerate() {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            ga.push(g[0] * (pj - onehot) / m as f64);
                        }
                    }
                    acc(&mut grads, *logits, ga);
                }
            }
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| {
                    Tensor::from_vec(self.nodes[i].value.shape().to_vec(), data)
                        .expect("gradient mirrors value shape")
                })
            })
            .collect();
        Ok(Gradients { grads })
    }
}

pub(crate) fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

/// Numerically stable softmax of one row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
