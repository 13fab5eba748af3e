//! Dense symmetric helpers shared by the metric and posterior code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry of `m - m^T`.
pub(crate) fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Symmetric eigendecomposition with eigenpairs sorted by descending value.
pub(crate) fn sym_eig_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(m.nrows(), n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// `V diag(f(lambda)) V^T`.
pub(crate) fn spectral_map(vals: &DVector<f64>, vecs: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let scaled = DMatrix::from_fn(vecs.nrows(), vecs.ncols(), |i, j| vecs[(i, j)] * f(vals[j]));
    &scaled * vecs.transpose()
}

/// Square root of a symmetric PSD matrix, clamping negative eigenvalues to 0.
#[cfg(test)]
pub(crate) fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eig_desc(m);
    spectral_map(&vals, &vecs, |l| l.max(0.0).sqrt())
}

/// `tr(m^{1/2})` for a symmetric PSD matrix.
pub(crate) fn trace_sqrt(m: &DMatrix<f64>) -> f64 {
    let (vals, _) = sym_eig_desc(m);
    vals.iter().map(|l| l.max(0.0).sqrt()).sum()
}

/// Flip the sign of a vector so its first non-negligible entry is positive.
pub(crate) fn canonical_sign(v: &mut DVector<f64>) {
    let scale = v.amax();
    if scale == 0.0 {
        return;
    }
    if let Some(first) = v.iter().copied().find(|x| x.abs() > 1e-12 * scale) {
        if first < 0.0 {
            v.neg_mut();
        }
    }
}
