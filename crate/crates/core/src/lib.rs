//! Flow-based conformal inference.
//!
//! Each class gets a roundtrip model: a generator from a standard-normal
//! latent space into input space, an inverse map back, and a discriminator.
//! The squared norm of a point's latent code is its non-conformity score for
//! that class. Ranking it against the scores of the class's training points
//! yields a finite-sample p-value, and thresholding the per-class p-values
//! gives a predictive set. An empty set flags the point as an outlier.
//!
//! Module map:
//!
//! - [`autodiff`]: dense tensors, a reverse-mode tape, MLPs and Adam.
//! - [`kernels`]: Gaussian kernel, median bandwidth, unbiased squared MMD.
//! - [`flow`]: per-class roundtrip models, their losses and training loop.
//! - [`conformal`]: scores, calibration pools, p-values, predictive sets.
//! - [`baselines`]: softmax classifier, Scaling sets, Adaptive Prediction Sets.
//! - [`datasets`]: synthetic classes, contamination, IDX files, splits.
//! - [`eval`]: coverage, size error, KS uniformity, chi-squared checks, reports.
//! - [`pipeline`]: in-memory composition of the above for experiments.

pub mod autodiff;
pub mod baselines;
pub mod conformal;
pub mod datasets;
mod error;
pub mod eval;
pub mod flow;
pub mod kernels;
pub mod par;
pub mod pipeline;
pub mod rng;

pub use autodiff::{Activation, Adam, AdamConfig, Mlp, MlpSpec, ParamSet, Tape, Tensor, Var};
pub use error::{Error, Result};
