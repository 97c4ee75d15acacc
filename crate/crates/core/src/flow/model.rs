use rand::Rng;
use serde::{Deserialize, Serialize};

use super::train::TrainConfig;
use crate::autodiff::{Activation, Mlp, MlpDocument, MlpSpec, Tensor};
use crate::{Error, Result};

pub const FLOW_DOC_VERSION: u32 = 1;

/// Latent dimension; the base distribution is always `N(0, I_d)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentSpec {
    pub dim: usize,
}

impl LatentSpec {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("latent dimension must be at least 1".into()));
        }
        Ok(Self { dim })
    }

    /// The latent space may not be larger than the input space.
    pub fn check_input_dim(&self, input_dim: usize) -> Result<()> {
        if self.dim > input_dim {
            return Err(Error::Config(format!(
                "latent dimension {} exceeds input dimension {input_dim}",
                self.dim
            )));
        }
        Ok(())
    }
}

/// Input of the logistic class head.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadFeatures {
    /// `σ(a |z|^2 + b)`: one feature, the latent squared norm.
    #[default]
    Radial,
    /// `σ(w·z + b)` on the raw latent vector.
    Linear,
}

impl HeadFeatures {
    pub fn input_dim(self, latent_dim: usize) -> usize {
        match self {
            HeadFeatures::Radial => 1,
            HeadFeatures::Linear => latent_dim,
        }
    }
}

/// Hidden widths and activation shared by the generator, inverse and
/// discriminator networks, and the class head's input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowArchitecture {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    #[serde(default)]
    pub head: HeadFeatures,
}

impl Default for FlowArchitecture {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            activation: Activation::LeakyRelu,
            head: HeadFeatures::Radial,
        }
    }
}

impl FlowArchitecture {
    fn spec(&self, input: usize, output: usize, final_activation: Activation) -> Result<MlpSpec> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(&self.hidden);
        widths.push(output);
        MlpSpec::uniform(&widths, self.activation, final_activation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub latent: LatentSpec,
    #[serde(default)]
    pub architecture: FlowArchitecture,
}

/// Generator, inverse, discriminator and logistic head for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassFlowModel {
    pub class_label: usize,
    pub latent: LatentSpec,
    /// latent -> input
    pub generator: Mlp,
    /// input -> latent
    pub inverse: Mlp,
    /// input -> (0, 1)
    pub discriminator: Mlp,
    /// head features -> (0, 1), estimates `P(Y = class | latent)`
    pub head: Mlp,
    pub head_features: HeadFeatures,
    trained: bool,
}

impl ClassFlowModel {
    pub fn new<R: Rng + ?Sized>(
        class_label: usize,
        input_dim: usize,
        spec: &FlowSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let d = spec.latent.dim;
        spec.latent.check_input_dim(input_dim)?;
        let arch = &spec.architecture;
        let generator = Mlp::new(arch.spec(d, input_dim, Activation::Identity)?, rng)?;
        let inverse = Mlp::new(arch.spec(input_dim, d, Activation::Identity)?, rng)?;
        let discriminator = Mlp::new(arch.spec(input_dim, 1, Activation::Sigmoid)?, rng)?;
        let head_features = arch.head;
        let head = Mlp::new(
            MlpSpec::new(
                vec![head_features.input_dim(d), 1],
                vec![],
                Activation::Sigmoid,
            )?,
            rng,
        )?;
        Ok(Self {
            class_label,
            latent: spec.latent,
            generator,
            inverse,
            discriminator,
            head,
            head_features,
            trained: false,
        })
    }

    /// Assemble a model from existing networks, e.g. a fixed oracle encoder.
    pub fn from_parts(
        class_label: usize,
        generator: Mlp,
        inverse: Mlp,
        discriminator: Mlp,
        head: Mlp,
        head_features: HeadFeatures,
        trained: bool,
    ) -> Result<Self> {
        let d = inverse.output_dim();
        let p = inverse.input_dim();
        let latent = LatentSpec::new(d)?;
        latent.check_input_dim(p)?;
        let ok = generator.input_dim() == d
            && generator.output_dim() == p
            && discriminator.input_dim() == p
            && discriminator.output_dim() == 1
            && head.input_dim() == head_features.input_dim(d)
            && head.output_dim() == 1;
        if !ok {
            return Err(Error::Shape(format!(
                "inconsistent flow networks for latent dim {d} and input dim {p}"
            )));
        }
        Ok(Self {
            class_label,
            latent,
            generator,
            inverse,
            discriminator,
            head,
            head_features,
            trained,
        })
    }

    /// Oracle model whose inverse is a fixed affine map `x W + b`; the other
    /// networks are identity-shaped placeholders. Marked trained.
    pub fn with_fixed_encoder(class_label: usize, encoder: Mlp) -> Result<Self> {
        let d = encoder.output_dim();
        let p = encoder.input_dim();
        let mut gw = Tensor::zeros(&[d, p]);
        for i in 0..d.min(p) {
            gw.data_mut()[i * p + i] = 1.0;
        }
        let generator = Mlp::affine(gw, Tensor::zeros(&[1, p]))?;
        let disc = Mlp::from_layers(
            MlpSpec::new(vec![p, 1], vec![], Activation::Sigmoid)?,
            vec![crate::autodiff::Layer {
                weight: Tensor::zeros(&[p, 1]),
                bias: Tensor::zeros(&[1, 1]),
            }],
        )?;
        let head = Mlp::from_layers(
            MlpSpec::new(vec![1, 1], vec![], Activation::Sigmoid)?,
            vec![crate::autodiff::Layer {
                weight: Tensor::zeros(&[1, 1]),
                bias: Tensor::zeros(&[1, 1]),
            }],
        )?;
        Self::from_parts(
            class_label,
            generator,
            encoder,
            disc,
            head,
            HeadFeatures::Radial,
            true,
        )
    }

    pub fn input_dim(&self) -> usize {
        self.inverse.input_dim()
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub(crate) fn mark_trained(&mut self) {
        self.trained = true;
    }

    /// Latent codes `I(X)`, one row per input row.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.inverse.predict(x)
    }

    /// Inputs `G(Z)`, one row per latent row.
    pub fn generate(&self, z: &Tensor) -> Result<Tensor> {
        self.generator.predict(z)
    }

    /// Head probabilities `P(Y = class | I(x))` for each input row.
    pub fn class_probability(&self, x: &Tensor) -> Result<Tensor> {
        let z = self.encode(x)?;
        let features = match self.head_features {
            HeadFeatures::Linear => z,
            HeadFeatures::Radial => Tensor::from_vec(
                vec![z.rows(), 1],
                z.iter_rows()
                    .map(|r| r.iter().map(|v| v * v).sum())
                    .collect(),
            )?,
        };
        self.head.predict(&features)
    }

    /// Discriminator probabilities, clamped into `[eps, 1 - eps]`.
    pub fn discriminate(&self, x: &Tensor) -> Result<Tensor> {
        let eps = super::losses::PROB_EPS;
        Ok(self
            .discriminator
            .predict(x)?
            .map(|p| p.clamp(eps, 1.0 - eps)))
    }

    pub fn to_document(&self, config: Option<&TrainConfig>) -> ClassFlowDocument {
        ClassFlowDocument {
            version: FLOW_DOC_VERSION,
            class_label: self.class_label,
            latent: self.latent,
            trained: self.trained,
            generator: self.generator.to_document(),
            inverse: self.inverse.to_document(),
            discriminator: self.discriminator.to_document(),
            head: self.head.to_document(),
            head_features: self.head_features,
            train_config: config.cloned(),
        }
    }

    pub fn from_document(doc: &ClassFlowDocument) -> Result<Self> {
        if doc.version != FLOW_DOC_VERSION {
            return Err(Error::Parse(format!(
                "unsupported model bundle version {}",
                doc.version
            )));
        }
        let model = Self::from_parts(
            doc.class_label,
            Mlp::from_document(&doc.generator)?,
            Mlp::from_document(&doc.inverse)?,
            Mlp::from_document(&doc.discriminator)?,
            Mlp::from_document(&doc.head)?,
            doc.head_features,
            doc.trained,
        )?;
        if model.latent != doc.latent {
            return Err(Error::Parse(
                "latent spec does not match the inverse network".into(),
            ));
        }
        Ok(model)
    }
}

/// JSON bundle for one class: the four networks, latent spec and the
/// training configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFlowDocument {
    pub version: u32,
    pub class_label: usize,
    pub latent: LatentSpec,
    pub trained: bool,
    pub generator: MlpDocument,
    pub inverse: MlpDocument,
    pub discriminator: MlpDocument,
    pub head: MlpDocument,
    #[serde(default)]
    pub head_features: HeadFeatures,
    pub train_config: Option<TrainConfig>,
}
