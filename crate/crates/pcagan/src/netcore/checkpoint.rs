use super::{AdamState, AffineGenerator, LinearDiscriminator, ParamVector};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Generator and critic parameters with their optimizer states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub dim: usize,
    pub code_dim: usize,
    pub epoch: usize,
    /// SHA-256 of the training configuration that produced the weights.
    pub config_hash: String,
    pub generator: ParamVector,
    pub discriminator: ParamVector,
    pub generator_adam: AdamState,
    pub discriminator_adam: AdamState,
}

impl Checkpoint {
    pub fn generator(&self) -> Result<AffineGenerator> {
        AffineGenerator::from_params(self.dim, self.code_dim, self.generator.clone())
    }

    pub fn discriminator(&self) -> Result<LinearDiscriminator> {
        LinearDiscriminator::from_params(self.dim, self.discriminator.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: ck.format_version,
                expected: CHECKPOINT_FORMAT_VERSION,
            });
        }
        ck.generator.layout().validate()?;
        ck.discriminator.layout().validate()?;
        ck.generator()?;
        ck.discriminator()?;
        Ok(ck)
    }
}
