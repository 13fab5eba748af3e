use super::ParamVector;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamSettings {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamSettings {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

impl AdamSettings {
    pub fn validate(&self) -> Result<()> {
        let ok =
            self.lr > 0.0 && (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// Adam moments plus the settings they were accumulated with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub settings: AdamSettings,
}

impl AdamState {
    pub fn new(len: usize, settings: AdamSettings) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            settings,
        }
    }

    /// In-place update of `values`; see [`adam_step`].
    pub fn apply(&mut self, values: &mut [f64], grad: &[f64]) -> Result<()> {
        if values.len() != grad.len() || grad.len() != self.first_moment.len() {
            return Err(Error::invalid(format!(
                "Adam length mismatch: params {}, grad {}, state {}",
                values.len(),
                grad.len(),
                self.first_moment.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::numerical(format!("non-finite gradient entry {i} ({})", grad[i])));
        }
        let AdamSettings { lr, beta1, beta2, eps } = self.settings;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in values
            .iter_mut()
            .zip(grad)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// One bias-corrected Adam step; returns the new parameters and state.
pub fn adam_step(p: &ParamVector, grad: &[f64], s: &AdamState) -> Result<(ParamVector, AdamState)> {
    let mut p = p.clone();
    let mut s = s.clone();
    s.apply(p.values_mut(), grad)?;
    Ok((p, s))
}
