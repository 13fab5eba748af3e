//! Independent reference computations. None of these call into the
//! library's own linear algebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use pcagan::gaussian_world::{GaussianPrior, MeasurementModel};

/// Posterior by conditioning the joint Gaussian of `(x, y)` with an explicit
/// inverse of the measurement covariance.
pub fn schur_posterior(prior: &GaussianPrior, mm: &MeasurementModel, y: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let d = prior.dim();
    let m = DMatrix::from_fn(d, d, |i, j| if i == j && mm.mask()[i] { 1.0 } else { 0.0 });
    let sx = prior.eigvecs() * DMatrix::from_diagonal(prior.eigvals()) * prior.eigvecs().transpose();
    let sxy = &sx * m.transpose();
    let sy = &m * &sx * m.transpose() + DMatrix::identity(d, d) * mm.noise_var();
    let sy_inv = sy.try_inverse().expect("measurement covariance is invertible");
    let mean = prior.mean() + &sxy * &sy_inv * (y - &m * prior.mean());
    let cov = &sx - &sxy * &sy_inv * sxy.transpose();
    (mean, cov)
}

/// Squared W2 between Gaussians. The cross term uses the eigenvalues of
/// `L^T B L` with `A = L L^T`, which share their spectrum with
/// `A^{1/2} B A^{1/2}`.
pub fn w2_oracle(mu_a: &DVector<f64>, a: &DMatrix<f64>, mu_b: &DVector<f64>, b: &DMatrix<f64>) -> f64 {
    let l = a.clone().cholesky().expect("A is positive definite").l();
    let inner = l.transpose() * b * &l;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    (mu_a - mu_b).norm_squared() + a.trace() + b.trace() - 2.0 * cross
}

/// Eigenpairs of the sample covariance `C^T C / (P - 1)`, descending.
pub fn sample_cov_eig(samples: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let p = samples.len();
    let d = samples[0].len();
    let mut mean = DVector::zeros(d);
    for s in samples {
        mean += s;
    }
    mean /= p as f64;
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        let c = s - &mean;
        cov += &c * c.transpose();
    }
    cov /= (p - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let vals = DVector::from_iterator(d, order.iter().map(|&i| eig.eigenvalues[i]));
    let vecs = DMatrix::from_fn(d, d, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}
