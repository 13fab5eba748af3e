use super::{GaussianDist, GaussianPrior, MeasurementModel};
use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{sym_eig_desc, symmetrize};
use nalgebra::{DMatrix, DVector};

/// The `y`-independent part of the linear-Gaussian posterior.
///
/// `mu_{x|y} = mu_x + G (y - M mu_x)` and
/// `Sigma_{x|y} = Sigma_x - G M Sigma_x` with gain
/// `G = Sigma_x M^T (M Sigma_x M^T + sigma^2 I)^{-1}`, obtained from a
/// Cholesky solve rather than an explicit inverse.
#[derive(Debug, Clone)]
pub struct PosteriorOperator {
    prior_mean: DVector<f64>,
    measured_mean: DVector<f64>,
    gain: DMatrix<f64>,
    cov: GaussianDist,
    cov_sqrt: DMatrix<f64>,
}

impl PosteriorOperator {
    pub fn new(prior: &GaussianPrior, mm: &MeasurementModel) -> Result<Self> {
        let d = prior.dim();
        mm.check_dim(d)?;
        let sigma_x = prior.covariance();
        let mask = DVector::from_iterator(d, mm.mask().iter().map(|&b| if b { 1.0 } else { 0.0 }));
        // M Sigma_x, with M diagonal.
        let sigma_yx = DMatrix::from_fn(d, d, |i, j| mask[i] * sigma_x[(i, j)]);
        let mut sigma_y = DMatrix::from_fn(d, d, |i, j| sigma_yx[(i, j)] * mask[j]);
        for i in 0..d {
            sigma_y[(i, i)] += mm.noise_var();
        }
        let sigma_y = symmetrize(&sigma_y);
        let chol = sigma_y.clone().cholesky().ok_or_else(|| {
            let (vals, _) = sym_eig_desc(&sigma_y);
            Error::numerical(format!(
                "measurement covariance is not positive definite (eigenvalues in [{:.3e}, {:.3e}], condition {:.3e})",
                vals[d - 1],
                vals[0],
                vals[0] / vals[d - 1].abs()
            ))
        })?;
        let gain = chol.solve(&sigma_yx).transpose();
        let cov = symmetrize(&(&sigma_x - &gain * &sigma_yx));
        let prior_mean = prior.mean().clone();
        let measured_mean = mm.apply(&prior_mean);
        let cov = GaussianDist::new(DVector::zeros(d), cov)?;
        let cov_sqrt = cov.cov_sqrt();
        Ok(Self {
            prior_mean,
            measured_mean,
            gain,
            cov,
            cov_sqrt,
        })
    }

    pub fn dim(&self) -> usize {
        self.prior_mean.len()
    }

    pub fn mean(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim("measurement", y.len(), self.dim())?;
        Ok(&self.prior_mean + &self.gain * (y - &self.measured_mean))
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        self.cov.cov()
    }

    /// `Sigma_{x|y}^{1/2}`, computed once.
    pub fn cov_sqrt(&self) -> &DMatrix<f64> {
        &self.cov_sqrt
    }

    /// Eigenvalues of `Sigma_{x|y}`, descending.
    pub fn eigvals(&self) -> &DVector<f64> {
        self.cov.eigvals()
    }

    pub fn eigvecs(&self) -> &DMatrix<f64> {
        self.cov.eigvecs()
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn posterior(&self, y: &DVector<f64>) -> Result<GaussianDist> {
        GaussianDist::new(self.mean(y)?, self.cov.cov().clone())
    }
}

/// Exact `p(x | y)` for the linear-Gaussian model.
pub fn analytic_posterior(prior: &GaussianPrior, mm: &MeasurementModel, y: &DVector<f64>) -> Result<GaussianDist> {
    PosteriorOperator::new(prior, mm)?.posterior(y)
}
