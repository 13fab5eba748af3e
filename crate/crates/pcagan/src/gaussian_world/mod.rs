//! Synthetic Gaussian inverse problems with exact posteriors.
//!
//! A signal `x ~ N(mu_x, Sigma_x)` is observed as `y = M x + w`, with `M` a
//! 0/1 diagonal mask and `w ~ N(0, sigma^2 I)`. Because `(x, y)` is jointly
//! Gaussian, `p(x | y)` is Gaussian with a closed form, which makes the
//! Wasserstein-2 distance between a learned sampler and the truth
//! computable exactly.

mod dist;
mod measurement;
mod posterior;
mod prior;

pub(crate) use dist::w2_from_parts;
pub use dist::{w2_gaussian, GaussianDist, PSD_RELATIVE_TOLERANCE};
pub use measurement::{MaskConvention, MeasurementModel};
pub use posterior::{analytic_posterior, PosteriorOperator};
pub use prior::{make_prior_chain, GaussianPrior};

/// Version stamped into every JSON document this module writes.
pub const FORMAT_VERSION: u32 = 1;

use crate::error::{ensure_dim, Result};
use crate::rng::normal_vector;
use nalgebra::DVector;
use rand::Rng;

/// Draw one `(x, y)` pair: `x` from the prior, `y = M x + w`.
pub fn sample_pair<R: Rng + ?Sized>(
    prior: &GaussianPrior,
    mm: &MeasurementModel,
    rng: &mut R,
) -> Result<(DVector<f64>, DVector<f64>)> {
    ensure_dim("measurement model", mm.dim(), prior.dim())?;
    let x = prior.sample(rng);
    let noise = normal_vector(rng, mm.dim()) * mm.noise_var().sqrt();
    let y = mm.apply(&x) + noise;
    Ok((x, y))
}
