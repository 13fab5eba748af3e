//! Loss terms of the rcGAN and pcaGAN objectives and their sample-based
//! estimators.

mod adversarial;
mod pca;
mod rc;
mod sd_controller;

pub use adversarial::{adv_loss_disc, adv_loss_gen, AdvGenLoss, DiscriminatorObjective, DiscriminatorSample};
pub use pca::{
    eval_loss, evec_loss, pca_extract, pca_extract_with_mean, EigvalScale, EvalLossValue, PcaEstimate, PcaLoss,
    PcaStopGrad, EIGVAL_FLOOR,
};
pub use rc::{l1_reg, l1_reg_grad, sd_reward, sd_reward_grad, RcLoss};
pub use sd_controller::{initial_beta_sd, SdController, SdSettings, SdStats, SdUpdate};

/// Sign with `sign(0) = 0`, the subgradient convention for l1 terms.
pub(crate) fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn sample_mean(samples: &[nalgebra::DVector<f64>]) -> nalgebra::DVector<f64> {
    let mut mean = nalgebra::DVector::zeros(samples[0].len());
    for s in samples {
        mean += s;
    }
    mean / samples.len() as f64
}
