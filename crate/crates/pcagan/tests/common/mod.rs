//! Helpers shared by the integration tests and the acceptance target.
#![allow(dead_code)]

pub mod checks;
pub mod oracles;

use nalgebra::{DMatrix, DVector};
use pcagan::gaussian_world::{GaussianPrior, MeasurementModel};
use pcagan::rng::{standard_normal, stream, Domain, StreamRng};
use rand::Rng;

pub fn rng(index: u64) -> StreamRng {
    stream(0x7e57, Domain::User, index)
}

pub fn normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| standard_normal(rng))
}

pub fn normal_mat<R: Rng + ?Sized>(rng: &mut R, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| standard_normal(rng))
}

/// Haar-ish orthogonal matrix from the QR of a Gaussian matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DMatrix<f64> {
    let qr = normal_mat(rng, d, d).qr();
    let (q, r) = qr.unpack();
    let signs = DVector::from_fn(d, |i, _| if r[(i, i)] < 0.0 { -1.0 } else { 1.0 });
    q * DMatrix::from_diagonal(&signs)
}

/// A prior with half-normal eigenvalues bounded away from zero.
pub fn random_prior<R: Rng + ?Sized>(rng: &mut R, d: usize) -> GaussianPrior {
    let mean = normal_vec(rng, d);
    let vals = DVector::from_fn(d, |_, _| standard_normal(rng).abs() + 0.05);
    GaussianPrior::new(mean, vals, random_orthogonal(rng, d)).unwrap()
}

/// A random mask that keeps at least one coordinate.
pub fn random_measurement<R: Rng + ?Sized>(rng: &mut R, d: usize) -> MeasurementModel {
    let mut mask: Vec<bool> = (0..d).map(|_| rng.random_bool(0.5)).collect();
    let keep = rng.random_range(0..d);
    mask[keep] = true;
    let noise = 10f64.powf(rng.random_range(-3.0..0.0));
    MeasurementModel::new(mask, noise).unwrap()
}

pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DMatrix<f64> {
    let a = normal_mat(rng, d, d + 2);
    &a * a.transpose() / (d as f64) + DMatrix::identity(d, d) * 1e-2
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.amax()
}
