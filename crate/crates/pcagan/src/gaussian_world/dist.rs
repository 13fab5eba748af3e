use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{asymmetry, spectral_map, sym_eig_desc, symmetrize, trace_sqrt};
use nalgebra::{DMatrix, DVector};

/// Negative eigenvalues down to `-PSD_RELATIVE_TOLERANCE * lambda_max` are
/// treated as roundoff and clamped; anything more negative is rejected.
pub const PSD_RELATIVE_TOLERANCE: f64 = 1e-8;

const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// A Gaussian `N(mean, cov)` with a cached, clamped eigendecomposition.
#[derive(Debug, Clone)]
pub struct GaussianDist {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    eigvals: DVector<f64>,
    eigvecs: DMatrix<f64>,
}

impl GaussianDist {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::invalid("Gaussian dimension must be positive"));
        }
        ensure_dim("covariance rows", cov.nrows(), d)?;
        ensure_dim("covariance columns", cov.ncols(), d)?;
        if cov.iter().chain(mean.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("Gaussian parameters must be finite"));
        }
        let scale = cov.amax().max(1.0);
        let asym = asymmetry(&cov);
        if asym > SYMMETRY_TOLERANCE * scale {
            return Err(Error::invalid(format!(
                "covariance is not symmetric (max |C - C^T| = {asym:.3e})"
            )));
        }
        let cov = symmetrize(&cov);
        let (mut eigvals, eigvecs) = sym_eig_desc(&cov);
        let tol = PSD_RELATIVE_TOLERANCE * eigvals[0].abs().max(f64::MIN_POSITIVE);
        let smallest = eigvals[d - 1];
        if smallest < -tol {
            return Err(Error::invalid(format!(
                "covariance is not PSD: smallest eigenvalue {smallest:.3e} below -{tol:.3e}"
            )));
        }
        eigvals.apply(|l| *l = l.max(0.0));
        Ok(Self {
            mean,
            cov,
            eigvals,
            eigvecs,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Eigenvalues of the covariance, descending, clamped at zero.
    pub fn eigvals(&self) -> &DVector<f64> {
        &self.eigvals
    }

    /// Eigenvectors matching [`Self::eigvals`] column by column.
    pub fn eigvecs(&self) -> &DMatrix<f64> {
        &self.eigvecs
    }

    pub fn cov_sqrt(&self) -> DMatrix<f64> {
        spectral_map(&self.eigvals, &self.eigvecs, f64::sqrt)
    }

    pub fn trace(&self) -> f64 {
        self.cov.trace()
    }
}

/// Squared Wasserstein-2 distance between two Gaussians:
/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^{1/2} S_b S_a^{1/2})^{1/2})`.
pub fn w2_gaussian(a: &GaussianDist, b: &GaussianDist) -> Result<f64> {
    ensure_dim("w2 operands", b.dim(), a.dim())?;
    Ok(w2_with_sqrt(a, &a.cov_sqrt(), b))
}

/// Same as [`w2_gaussian`] with `S_a^{1/2}` supplied, for repeated use of one
/// reference distribution.
pub(crate) fn w2_with_sqrt(a: &GaussianDist, a_sqrt: &DMatrix<f64>, b: &GaussianDist) -> f64 {
    w2_from_parts(a.mean(), a.trace(), a_sqrt, b)
}

pub(crate) fn w2_from_parts(mean_a: &DVector<f64>, trace_a: f64, a_sqrt: &DMatrix<f64>, b: &GaussianDist) -> f64 {
    let mean_term = (mean_a - b.mean()).norm_squared();
    let cross = a_sqrt * b.cov() * a_sqrt;
    let value = mean_term + trace_a + b.trace() - 2.0 * trace_sqrt(&cross);
    value.max(0.0)
}
