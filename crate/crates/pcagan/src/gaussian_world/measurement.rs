use super::FORMAT_VERSION;
use crate::error::{ensure_dim, Error, Result};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Which indices count as "even" when building the default mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskConvention {
    /// Zero out indices 0, 2, 4, ... (masks `ceil(d/2)` entries).
    #[default]
    ZeroBasedEven,
    /// Zero out indices 1, 3, 5, ... (the even positions when counting from 1).
    OneBasedEven,
}

/// `y = M x + w` with `M` a 0/1 diagonal and `w ~ N(0, noise_var I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasurementDocument", into = "MeasurementDocument")]
pub struct MeasurementModel {
    mask: Vec<bool>,
    noise_var: f64,
}

impl MeasurementModel {
    pub fn new(mask: Vec<bool>, noise_var: f64) -> Result<Self> {
        if mask.is_empty() {
            return Err(Error::invalid("measurement dimension must be positive"));
        }
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(Error::invalid(format!(
                "noise variance must be positive, got {noise_var}"
            )));
        }
        Ok(Self { mask, noise_var })
    }

    /// The default masked-noisy model: even indices zeroed.
    pub fn masked_even(dim: usize, noise_var: f64, convention: MaskConvention) -> Result<Self> {
        let masked_parity = match convention {
            MaskConvention::ZeroBasedEven => 0,
            MaskConvention::OneBasedEven => 1,
        };
        Self::new((0..dim).map(|i| i % 2 != masked_parity).collect(), noise_var)
    }

    pub fn identity(dim: usize, noise_var: f64) -> Result<Self> {
        Self::new(vec![true; dim], noise_var)
    }

    pub fn dim(&self) -> usize {
        self.mask.len()
    }

    /// Diagonal of `M`: `true` where the coordinate is observed.
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.iter().zip(&self.mask).map(|(v, &keep)| if keep { *v } else { 0.0 }),
        )
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        ensure_dim("measurement model", self.dim(), d)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("measurement documents always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasurementDocument {
    format_version: u32,
    kind: String,
    dim: usize,
    mask: Vec<u8>,
    noise_var: f64,
}

impl From<MeasurementModel> for MeasurementDocument {
    fn from(m: MeasurementModel) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kind: "measurement_model".into(),
            dim: m.mask.len(),
            mask: m.mask.iter().map(|&b| b as u8).collect(),
            noise_var: m.noise_var,
        }
    }
}

impl TryFrom<MeasurementDocument> for MeasurementModel {
    type Error = Error;

    fn try_from(doc: MeasurementDocument) -> Result<Self> {
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: doc.format_version,
                expected: FORMAT_VERSION,
            });
        }
        if doc.kind != "measurement_model" {
            return Err(Error::invalid(format!(
                "expected a measurement_model document, got {}",
                doc.kind
            )));
        }
        ensure_dim("mask", doc.mask.len(), doc.dim)?;
        let mask = doc
            .mask
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::invalid(format!("mask entries must be 0 or 1, got {other}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(mask, doc.noise_var)
    }
}
