//! PCA-regularized conditional GAN posterior samplers for Gaussian linear
//! inverse problems.
//!
//! The crate trains an affine generator `x = A y + B z + b` against a linear
//! critic with the rcGAN objective (supervised l1 on the sample mean plus a
//! standard-deviation reward) and, optionally, the eigenvector and eigenvalue
//! regularizers that push the generated conditional covariance towards the
//! true principal components. Because the ground-truth posterior is Gaussian
//! and known in closed form, every model can be scored with the exact
//! Wasserstein-2 distance.
//!
//! Module map:
//!
//! - [`gaussian_world`]: priors, measurement model, analytic posterior, W2.
//! - [`netcore`]: parameter vectors, the generator and critic, gradients, Adam.
//! - [`regularizers`]: adversarial, l1, SD and PCA losses; the SD controller.
//! - [`trainer`]: the generator/critic training loop with lazy PCA terms.
//! - [`evaluation`]: empirical moments, W2, REM_K, rMSE and raw-vector CFID.
//! - [`datakit`]: deterministic datasets and their binary container format.
//! - [`experiment`]: config files, sweeps and the `results.csv` contract.

pub mod datakit;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod gaussian_world;
mod linalg;
pub mod netcore;
pub mod regularizers;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
