//! Deep Gaussian mixture models: nested mixtures of linear-Gaussian factor
//! layers, fitted by stochastic EM.
//!
//! A model with `h` layers maps a standard normal latent `z(h)` through
//! `h` mixtures of affine maps with diagonal Gaussian noise down to the
//! observed data. Integrating the latents out along every path of
//! component choices gives a flat Gaussian mixture with `prod k_l`
//! components that share parameters.

pub mod baseline;
pub mod cli;
pub mod data;
pub mod error;
pub mod gaussian;
pub mod kmeans;
pub mod metrics;
pub mod model;
pub mod selection;
pub mod sem;

#[cfg(test)]
mod testutil;

pub use error::{DgmmError, Result};
pub use gaussian::Gaussian;
pub use model::{DgmmParams, DgmmSpec, LayerComponent, Path};
pub use sem::{fit, FitConfig, FitResult};
pub use selection::{model_search, SearchSpace};
