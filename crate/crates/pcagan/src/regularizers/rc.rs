use super::{sample_mean, sign0, AdvGenLoss};
use crate::netcore::{SampleLoss, SampleLossEval};
use nalgebra::DVector;

fn check_samples(samples: &[DVector<f64>], min: usize) {
    assert!(
        samples.len() >= min,
        "need at least {min} samples, got {}",
        samples.len()
    );
}

/// `|x - mean(samples)|_1`.
pub fn l1_reg(x: &DVector<f64>, samples: &[DVector<f64>]) -> f64 {
    check_samples(samples, 1);
    (x - sample_mean(samples)).lp_norm(1)
}

/// [`l1_reg`] and its gradient with respect to each sample.
pub fn l1_reg_grad(x: &DVector<f64>, samples: &[DVector<f64>]) -> (f64, Vec<DVector<f64>>) {
    check_samples(samples, 1);
    let resid = x - sample_mean(samples);
    let p = samples.len() as f64;
    let g = resid.map(|r| -sign0(r) / p);
    (resid.lp_norm(1), vec![g; samples.len()])
}

/// `sum_i |x_i - mean(samples)|_1`.
pub fn sd_reward(samples: &[DVector<f64>]) -> f64 {
    check_samples(samples, 2);
    let mean = sample_mean(samples);
    samples.iter().map(|s| (s - &mean).lp_norm(1)).sum()
}

/// [`sd_reward`] and its gradient with respect to each sample.
pub fn sd_reward_grad(samples: &[DVector<f64>]) -> (f64, Vec<DVector<f64>>) {
    check_samples(samples, 2);
    let mean = sample_mean(samples);
    let signs: Vec<DVector<f64>> = samples.iter().map(|s| (s - &mean).map(sign0)).collect();
    let value = samples.iter().map(|s| (s - &mean).lp_norm(1)).sum();
    let mut avg = DVector::zeros(mean.len());
    for s in &signs {
        avg += s;
    }
    avg /= samples.len() as f64;
    (value, signs.iter().map(|s| s - &avg).collect())
}

/// The per-measurement rcGAN generator loss:
/// `-beta_adv sum_i D(x_i, y) + |x - mean|_1 - beta_sd sum_i |x_i - mean|_1`.
pub struct RcLoss {
    pub x: DVector<f64>,
    pub adversarial: AdvGenLoss,
    pub beta_sd: f64,
}

impl SampleLoss for RcLoss {
    fn evaluate(&self, y: &DVector<f64>, samples: &[DVector<f64>]) -> SampleLossEval {
        let adv = self.adversarial.evaluate(y, samples);
        let (l1, l1_grads) = l1_reg_grad(&self.x, samples);
        let (sd, sd_grads) = sd_reward_grad(samples);
        let grads = adv
            .sample_grads
            .iter()
            .zip(&l1_grads)
            .zip(&sd_grads)
            .map(|((a, l), s)| a + l - s * self.beta_sd)
            .collect();
        SampleLossEval {
            value: adv.value + l1 - self.beta_sd * sd,
            sample_grads: grads,
            parts: vec![("adv", adv.value), ("l1", l1), ("sd", -self.beta_sd * sd)],
        }
    }
}
