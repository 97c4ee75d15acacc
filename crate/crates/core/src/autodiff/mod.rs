//! Dense tensors, reverse-mode differentiation, multilayer perceptrons and
//! the Adam optimizer.

mod adam;
mod mlp;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use mlp::{Activation, BoundMlp, Layer, Mlp, MlpDocument, MlpSpec, ParamSet, MLP_DOC_VERSION};
pub use tape::{softmax, Gradients, Tape, Var};
pub use tensor::Tensor;
