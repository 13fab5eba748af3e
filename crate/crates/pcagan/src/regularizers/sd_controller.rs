use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Reward weight for which the l1 + SD objective is stationary at the
/// correct per-coordinate spread of a Gaussian posterior with exact mean:
/// `1 / (P sqrt(P^2 - 1))`.
pub fn initial_beta_sd(p: usize) -> f64 {
    let p = p as f64;
    1.0 / (p * (p * p - 1.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdSettings {
    /// Starting `beta_sd`; `None` uses [`initial_beta_sd`] for the monitor `P`.
    pub initial: Option<f64>,
    /// Exponent applied to the measured ratio.
    pub gain: f64,
    /// Per-update multiplicative change is clipped to `[1 - band, 1 + band]`.
    pub band: f64,
    /// Samples per measurement used to measure the ratio; `None` means `P_rc`.
    pub monitor_p: Option<usize>,
}

impl Default for SdSettings {
    fn default() -> Self {
        Self {
            initial: None,
            gain: 0.5,
            band: 0.2,
            monitor_p: None,
        }
    }
}

/// Validation moments measured with `p` samples per measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdStats {
    pub p: usize,
    /// `E |x - x_(P)|^2`.
    pub err_sq_mean: f64,
    /// `mean_i E |x_i - x_(P)|^2`.
    pub spread_sq_mean: f64,
}

impl SdStats {
    /// `((P-1)/(P+1)) E|x - x_(P)|^2 / mean_i E|x_i - x_(P)|^2`.
    ///
    /// With the correct conditional mean this equals `(P t + 1) / (P + 1)` for
    /// `t = tr(Sigma) / tr(Sigma_hat)`, so it is 1 exactly when the traces
    /// agree and above 1 when the generated spread is too small.
    pub fn ratio(&self) -> Option<f64> {
        let p = self.p as f64;
        (self.spread_sq_mean > 0.0 && self.err_sq_mean.is_finite())
            .then(|| (p - 1.0) / (p + 1.0) * self.err_sq_mean / self.spread_sq_mean)
    }
}

/// Multiplicative controller for the SD reward weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdController {
    pub beta_sd: f64,
    pub gain: f64,
    pub band: f64,
    pub monitor_p: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdUpdate {
    pub controller: SdController,
    /// Measured ratio, `None` when the denominator vanished and the weight
    /// was held.
    pub rho: Option<f64>,
}

impl SdController {
    pub fn new(settings: &SdSettings, monitor_p: usize) -> Result<Self> {
        if monitor_p < 2 {
            return Err(Error::invalid("the SD monitor needs P >= 2"));
        }
        if !(settings.band >= 0.0 && settings.band < 1.0) {
            return Err(Error::invalid(format!(
                "SD band must be in [0, 1), got {}",
                settings.band
            )));
        }
        let beta_sd = settings.initial.unwrap_or_else(|| initial_beta_sd(monitor_p));
        if !(beta_sd > 0.0 && beta_sd.is_finite()) {
            return Err(Error::invalid(format!("beta_sd must be positive, got {beta_sd}")));
        }
        Ok(Self {
            beta_sd,
            gain: settings.gain,
            band: settings.band,
            monitor_p,
        })
    }

    /// `beta_sd <- beta_sd * clip(rho^gain, 1 - band, 1 + band)`.
    pub fn update(&self, stats: &SdStats) -> SdUpdate {
        let Some(rho) = stats.ratio() else {
            log::warn!(
                "SD controller: zero generated spread, holding beta_sd = {}",
                self.beta_sd
            );
            return SdUpdate {
                controller: *self,
                rho: None,
            };
        };
        let factor = rho.powf(self.gain).clamp(1.0 - self.band, 1.0 + self.band);
        SdUpdate {
            controller: SdController {
                beta_sd: self.beta_sd * factor,
                ..*self
            },
            rho: Some(rho),
        }
    }
}
