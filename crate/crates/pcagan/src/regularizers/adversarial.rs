use crate::netcore::{AffineGenerator, LinearDiscriminator, Objective, ParamVector, SampleLoss, SampleLossEval};
use nalgebra::DVector;

/// Generator side of the adversarial loss: `-beta_adv sum_i D(x_i, y)`.
#[derive(Debug, Clone)]
pub struct AdvGenLoss {
    pub critic: LinearDiscriminator,
    pub beta_adv: f64,
}

impl SampleLoss for AdvGenLoss {
    fn evaluate(&self, y: &DVector<f64>, samples: &[DVector<f64>]) -> SampleLossEval {
        let value = -self.beta_adv * samples.iter().map(|s| self.critic.forward_unchecked(s, y)).sum::<f64>();
        let g = self.critic.w_x() * (-self.beta_adv);
        SampleLossEval {
            value,
            sample_grads: vec![g; samples.len()],
            parts: vec![("adv", value)],
        }
    }
}

/// `-beta_adv * mean_b sum_i D(G(z_bi, y_b), y_b)` over a batch of
/// `(y_b, [z_b1, ..., z_bP])`.
pub fn adv_loss_gen(
    dsc: &LinearDiscriminator,
    gen: &AffineGenerator,
    batch: &[(DVector<f64>, Vec<DVector<f64>>)],
    beta_adv: f64,
) -> f64 {
    let loss = AdvGenLoss {
        critic: dsc.clone(),
        beta_adv,
    };
    let total: f64 = batch
        .iter()
        .map(|(y, codes)| loss.value(y, &gen.forward_many(y, codes)))
        .sum();
    total / batch.len() as f64
}

/// One critic training example with the generator held fixed.
#[derive(Debug, Clone)]
pub struct DiscriminatorSample {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub fakes: Vec<DVector<f64>>,
    /// `eps x + (1 - eps) fakes[0]`, where the gradient penalty is evaluated.
    pub interpolate: DVector<f64>,
}

impl DiscriminatorSample {
    pub fn new(x: DVector<f64>, y: DVector<f64>, fakes: Vec<DVector<f64>>, eps: f64) -> Self {
        let interpolate = &x * eps + &fakes[0] * (1.0 - eps);
        Self {
            x,
            y,
            fakes,
            interpolate,
        }
    }
}

/// Critic loss over `phi`:
/// `mean_b [ -(D(x, y) - mean_i D(x_i, y)) + gp (|grad_u D(u, y)|_{u = x~}| - 1)^2 ]`.
pub struct DiscriminatorObjective {
    pub dim: usize,
    pub gp_weight: f64,
    pub samples: Vec<DiscriminatorSample>,
}

impl DiscriminatorObjective {
    fn critic(&self, params: &[f64]) -> LinearDiscriminator {
        let pv = ParamVector::new(LinearDiscriminator::layout(self.dim), params.to_vec())
            .expect("objective parameters follow the critic layout");
        LinearDiscriminator::from_params(self.dim, pv).expect("layout already checked")
    }

    /// Value, gradient, and the (wasserstein, penalty) split of the value.
    pub fn evaluate(&self, params: &[f64]) -> (f64, Vec<f64>, (f64, f64)) {
        let d = self.dim;
        let critic = self.critic(params);
        let mut grad = vec![0.0; params.len()];
        let (mut wass, mut pen) = (0.0, 0.0);
        for s in &self.samples {
            let real = critic.forward_unchecked(&s.x, &s.y);
            let p = s.fakes.len() as f64;
            let fake = s.fakes.iter().map(|f| critic.forward_unchecked(f, &s.y)).sum::<f64>() / p;
            wass += -(real - fake);
            // d/dw of -(D(x,y) - mean D(x_i,y)): x-part -(x - mean x_i), y-part cancels.
            for k in 0..d {
                let fake_k = s.fakes.iter().map(|f| f[k]).sum::<f64>() / p;
                grad[k] -= s.x[k] - fake_k;
            }
            let g_u = critic.input_grad(&s.interpolate, &s.y);
            let norm = g_u.norm();
            pen += self.gp_weight * (norm - 1.0).powi(2);
            if norm > 0.0 {
                let coef = self.gp_weight * 2.0 * (norm - 1.0) / norm;
                for k in 0..d {
                    grad[k] += coef * g_u[k];
                }
            }
        }
        let n = self.samples.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        let (wass, pen) = (wass / n, pen / n);
        (wass + pen, grad, (wass, pen))
    }
}

impl Objective for DiscriminatorObjective {
    fn num_params(&self) -> usize {
        2 * self.dim + 1
    }

    fn value_and_grad(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let (v, g, _) = self.evaluate(params);
        (v, g)
    }
}

/// One critic batch entry: `(x, y, codes, eps)`.
pub type CriticEntry = (DVector<f64>, DVector<f64>, Vec<DVector<f64>>, f64);

/// Critic loss for the current critic `dsc` on samples from `gen`.
pub fn adv_loss_disc(dsc: &LinearDiscriminator, gen: &AffineGenerator, batch: &[CriticEntry], gp_weight: f64) -> f64 {
    let objective = DiscriminatorObjective {
        dim: dsc.dim(),
        gp_weight,
        samples: batch
            .iter()
            .map(|(x, y, codes, eps)| DiscriminatorSample::new(x.clone(), y.clone(), gen.forward_many(y, codes), *eps))
            .collect(),
    };
    objective.value(dsc.params().values())
}
