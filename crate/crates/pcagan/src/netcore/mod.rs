//! Trainable pieces: flat parameter vectors, the affine generator, the linear
//! critic, the analytic-gradient contract, and Adam.

mod adam;
mod checkpoint;
mod discriminator;
mod generator;
mod grad;
mod params;

pub use adam::{adam_step, AdamSettings, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use discriminator::LinearDiscriminator;
pub use generator::{AffineGenerator, GeneratorObjective, GeneratorTerm, SampleLoss, SampleLossEval};
pub use grad::{check_gradient, finite_difference_grad, grad_of, GradCheck, Objective};
pub use params::{ParamLayout, ParamSlice, ParamVector};
