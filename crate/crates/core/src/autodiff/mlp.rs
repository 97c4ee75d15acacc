use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::tensor::{matmul, Tensor};
use crate::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const MLP_DOC_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    /// Negative slope 0.2.
    LeakyRelu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub const ALL: [Activation; 5] = [
        Activation::Relu,
        Activation::LeakyRelu,
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Identity,
    ];

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative at input `x`, given the forward output `y`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

/// Layer widths (input first, output last) and activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    /// One per hidden layer.
    pub activations: Vec<Activation>,
    pub final_activation: Activation,
}

impl MlpSpec {
    pub fn new(
        layer_widths: Vec<usize>,
        activations: Vec<Activation>,
        final_activation: Activation,
    ) -> Result<Self> {
        let spec = Self {
            layer_widths,
            activations,
            final_activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Same hidden activation everywhere.
    pub fn uniform(
        widths: &[usize],
        hidden: Activation,
        final_activation: Activation,
    ) -> Result<Self> {
        let n_hidden = widths.len().saturating_sub(2);
        Self::new(widths.to_vec(), vec![hidden; n_hidden], final_activation)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::Config(
                "an MLP needs at least input and output widths".into(),
            ));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::Config(format!(
                "zero width in {:?}",
                self.layer_widths
            )));
        }
        if self.activations.len() != self.layer_widths.len() - 2 {
            return Err(Error::Config(format!(
                "{} hidden layers but {} activations",
                self.layer_widths.len() - 2,
                self.activations.len()
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().expect("validated")
    }

    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    fn activation_of(&self, layer: usize) -> Activation {
        if layer + 1 == self.n_layers() {
            self.final_activation
        } else {
            self.activations[layer]
        }
    }
}

/// One affine layer: `y = x W + b`, with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Parameters as a flat list `[W0, b0, W1, b1, ...]` with matching gradient
/// accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    params: Vec<Tensor>,
    grads: Vec<Tensor>,
}

impl ParamSet {
    fn new(params: Vec<Tensor>) -> Self {
        let grads = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { params, grads }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.params
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn grads(&self) -> &[Tensor] {
        &self.grads
    }

    /// Parameters and their gradients, for optimizers.
    pub fn pairs_mut(&mut self) -> impl Iterator<Item = (&mut Tensor, &mut Tensor)> {
        self.params.iter_mut().zip(self.grads.iter_mut())
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(0.0);
        }
    }

    pub fn layer(&self, i: usize) -> Layer {
        Layer {
            weight: self.params[2 * i].clone(),
            bias: self.params[2 * i + 1].clone(),
        }
    }

    pub fn n_layers(&self) -> usize {
        self.params.len() / 2
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(Tensor::is_finite)
    }

    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }
}

/// Parameter handles of one [`Mlp`] on a [`Tape`].
#[derive(Debug, Clone)]
pub struct BoundMlp {
    vars: Vec<Var>,
}

impl BoundMlp {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    params: ParamSet,
}

impl Mlp {
    /// Random initialization: weights uniform in `±sqrt(6 / (fan_in + fan_out))`,
    /// biases zero.
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = Vec::with_capacity(2 * spec.n_layers());
        for w in spec.layer_widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            params.push(Tensor::from_vec(vec![fan_in, fan_out], data)?);
            params.push(Tensor::zeros(&[1, fan_out]));
        }
        Ok(Self {
            spec,
            params: ParamSet::new(params),
        })
    }

    pub fn from_layers(spec: MlpSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        if layers.len() != spec.n_layers() {
            return Err(Error::Shape(format!(
                "spec has {} layers, got {}",
                spec.n_layers(),
                layers.len()
            )));
        }
        let mut params = Vec::with_capacity(2 * layers.len());
        for (i, (layer, w)) in layers
            .into_iter()
            .zip(spec.layer_widths.windows(2))
            .enumerate()
        {
            if layer.weight.shape() != [w[0], w[1]] || layer.bias.len() != w[1] {
                return Err(Error::Shape(format!(
                    "layer {i}: expected W {}x{} and b of {}, got W {:?} and b {:?}",
                    w[0],
                    w[1],
                    w[1],
                    layer.weight.shape(),
                    layer.bias.shape()
                )));
            }
            params.push(layer.weight);
            params.push(Tensor::from_vec(vec![1, w[1]], layer.bias.into_data())?);
        }
        Ok(Self {
            spec,
            params: ParamSet::new(params),
        })
    }

    /// Single linear layer `y = x W + b` with identity activation.
    pub fn affine(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (i, o) = (weight.rows(), weight.cols());
        let spec = MlpSpec::new(vec![i, o], vec![], Activation::Identity)?;
        Self::from_layers(spec, vec![Layer { weight, bias }])
    }

    /// `dim -> dim` identity map.
    pub fn identity(dim: usize) -> Result<Self> {
        let mut w = Tensor::zeros(&[dim, dim]);
        for i in 0..dim {
            w.data_mut()[i * dim + i] = 1.0;
        }
        Self::affine(w, Tensor::zeros(&[1, dim]))
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    /// Put parameters on the tape as leaves.
    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        BoundMlp {
            vars: self
                .params
                .params
                .iter()
                .map(|p| tape.leaf(p.clone()))
                .collect(),
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 2 || shape[1] != self.input_dim() {
            return Err(Error::Shape(format!(
                "layer 0 expects input width {}, got shape {:?}",
                self.input_dim(),
                shape
            )));
        }
        Ok(())
    }

    /// Forward pass recorded on `tape` using previously bound parameters.
    pub fn forward_bound(&self, tape: &mut Tape, bound: &BoundMlp, x: Var) -> Result<Var> {
        self.check_input(tape.value(x).shape())?;
        let mut h = x;
        for layer in 0..self.spec.n_layers() {
            let z = tape
                .matmul(h, bound.vars[2 * layer])
                .map_err(|e| Error::Shape(format!("layer {layer}: {e}")))?;
            let z = tape.add_row(z, bound.vars[2 * layer + 1])?;
            h = tape.activation(z, self.spec.activation_of(layer));
        }
        Ok(h)
    }

    /// Bind and run forward in one go.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<(Var, BoundMlp)> {
        let bound = self.bind(tape);
        let y = self.forward_bound(tape, &bound, x)?;
        Ok((y, bound))
    }

    /// Tape-free forward pass for inference. Same arithmetic as
    /// [`Mlp::forward_bound`].
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x.shape())?;
        let m = x.rows();
        let mut h = x.data().to_vec();
        for layer in 0..self.spec.n_layers() {
            let w = &self.params.params[2 * layer];
            let b = self.params.params[2 * layer + 1].data();
            let (k, n) = (w.shape()[0], w.shape()[1]);
            let mut z = matmul(&h, w.data(), m, k, n);
            let act = self.spec.activation_of(layer);
            for chunk in z.chunks_exact_mut(n) {
                for (o, bv) in chunk.iter_mut().zip(b) {
                    *o = act.apply(*o + bv);
                }
            }
            h = z;
        }
        Tensor::from_vec(vec![m, self.output_dim()], h)
    }

    /// Add this tape's gradients into the parameter accumulators.
    pub fn accumulate_grads(&mut self, grads: &Gradients, bound: &BoundMlp) {
        for (acc, var) in self.params.grads.iter_mut().zip(&bound.vars) {
            if let Some(g) = grads.wrt(*var) {
                acc.data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(a, x)| *a += x);
            }
        }
    }

    pub fn to_document(&self) -> MlpDocument {
        let layers = (0..self.params.n_layers())
            .map(|i| {
                let l = self.params.layer(i);
                LayerDoc {
                    w: l.weight.to_rows(),
                    b: l.bias.into_data(),
                }
            })
            .collect();
        MlpDocument {
            version: MLP_DOC_VERSION,
            spec: self.spec.clone(),
            layers,
        }
    }

    pub fn from_document(doc: &MlpDocument) -> Result<Self> {
        if doc.version != MLP_DOC_VERSION {
            return Err(Error::Parse(format!(
                "unsupported parameter document version {}",
                doc.version
            )));
        }
        let layers = doc
            .layers
            .iter()
            .map(|l| {
                Ok(Layer {
                    weight: Tensor::from_rows(&l.w)?,
                    bias: Tensor::row_vector(&l.b)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(doc.spec.clone(), layers)
    }
}

/// Versioned JSON form of an [`Mlp`]: `{version, spec, layers: [{W, b}]}`.
/// Floats are written in shortest round-trip form, so parsing restores
/// every parameter bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpDocument {
    pub version: u32,
    pub spec: MlpSpec,
    pub layers: Vec<LayerDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDoc {
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}
