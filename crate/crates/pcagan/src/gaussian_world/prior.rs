use super::FORMAT_VERSION;
use crate::error::{ensure_dim, Error, Result};
use crate::rng::{normal_vector, standard_normal, stream, Domain};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Signal prior `N(mean, V diag(eigvals) V^T)`, eigenpairs sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    mean: DVector<f64>,
    eigvals: DVector<f64>,
    eigvecs: DMatrix<f64>,
}

impl GaussianPrior {
    /// Validates the invariants and sorts eigenpairs by descending eigenvalue.
    pub fn new(mean: DVector<f64>, eigvals: DVector<f64>, eigvecs: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::invalid("prior dimension must be positive"));
        }
        ensure_dim("prior eigenvalues", eigvals.len(), d)?;
        ensure_dim("prior eigenvector rows", eigvecs.nrows(), d)?;
        ensure_dim("prior eigenvector columns", eigvecs.ncols(), d)?;
        if eigvals.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::invalid("prior eigenvalues must be finite and nonnegative"));
        }
        let gram_err = (eigvecs.transpose() * &eigvecs - DMatrix::identity(d, d)).norm();
        if gram_err > 1e-10 {
            return Err(Error::invalid(format!(
                "prior eigenvectors are not orthonormal (|V^T V - I|_F = {gram_err:.3e})"
            )));
        }
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eigvals[b].total_cmp(&eigvals[a]));
        let sorted_vals = DVector::from_iterator(d, order.iter().map(|&i| eigvals[i]));
        let mut sorted_vecs = DMatrix::zeros(d, d);
        for (dst, &src) in order.iter().enumerate() {
            sorted_vecs.set_column(dst, &eigvecs.column(src));
        }
        Ok(Self {
            mean,
            eigvals: sorted_vals,
            eigvecs: sorted_vecs,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn eigvals(&self) -> &DVector<f64> {
        &self.eigvals
    }

    pub fn eigvecs(&self) -> &DMatrix<f64> {
        &self.eigvecs
    }

    /// `Sigma_x = V diag(lambda) V^T`, exactly symmetrized.
    pub fn covariance(&self) -> DMatrix<f64> {
        let cov = crate::linalg::spectral_map(&self.eigvals, &self.eigvecs, |l| l);
        crate::linalg::symmetrize(&cov)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let n = normal_vector(rng, self.dim());
        let scaled = n.zip_map(&self.eigvals, |a, l| a * l.sqrt());
        &self.mean + &self.eigvecs * scaled
    }

    pub fn to_document(&self) -> PriorDocument {
        PriorDocument {
            format_version: FORMAT_VERSION,
            kind: "gaussian_prior".into(),
            dim: self.dim(),
            mean: self.mean.iter().copied().collect(),
            eigvals: self.eigvals.iter().copied().collect(),
            eigvecs: matrix_rows(&self.eigvecs),
        }
    }

    pub fn from_document(doc: &PriorDocument) -> Result<Self> {
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: doc.format_version,
                expected: FORMAT_VERSION,
            });
        }
        if doc.kind != "gaussian_prior" {
            return Err(Error::invalid(format!(
                "expected a gaussian_prior document, got {}",
                doc.kind
            )));
        }
        let d = doc.dim;
        ensure_dim("prior mean", doc.mean.len(), d)?;
        let eigvecs = matrix_from_rows(&doc.eigvecs, d, d)?;
        Self::new(
            DVector::from_vec(doc.mean.clone()),
            DVector::from_vec(doc.eigvals.clone()),
            eigvecs,
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("prior documents always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(text)?)
    }

    /// SHA-256 of the compact JSON document; identifies a prior in data files.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.to_document()).expect("prior documents always serialize");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Versioned JSON form of a [`GaussianPrior`]; matrices are arrays of rows.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PriorDocument {
    pub format_version: u32,
    pub kind: String,
    pub dim: usize,
    pub mean: Vec<f64>,
    pub eigvals: Vec<f64>,
    pub eigvecs: Vec<Vec<f64>>,
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    ensure_dim("matrix rows", rows.len(), nrows)?;
    for r in rows {
        ensure_dim("matrix columns", r.len(), ncols)?;
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Raw draws of the generating procedure, kept in draw order (unsorted) so
/// that truncation picks the same eigenpairs the procedure does.
struct RawPrior {
    mean: DVector<f64>,
    eigvals: DVector<f64>,
    eigvecs: DMatrix<f64>,
}

fn orthonormal_q(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().qr().q()
}

/// Builds the chain of priors for `d = 10, 20, ..., d_max`.
///
/// At `d_max`: mean `~ N(0, I)`, eigenvalues `|N(0, 1)|`, eigenvectors the
/// `Q` factor of an i.i.d. standard normal matrix. Each smaller `d` keeps the
/// first `d` entries of the mean, the first `d` eigenvalues, and the leading
/// `d x d` block of the `d_max` eigenvector matrix re-orthonormalized by QR.
///
/// Draws come from `stream(seed, Domain::Prior, 0)` in the order: mean,
/// eigenvalue magnitudes, then the matrix column by column.
pub fn make_prior_chain(d_max: usize, seed: u64) -> Result<Vec<(usize, GaussianPrior)>> {
    if d_max == 0 || !d_max.is_multiple_of(10) {
        return Err(Error::invalid(format!(
            "d_max must be a positive multiple of 10, got {d_max}"
        )));
    }
    let mut rng = stream(seed, Domain::Prior, 0);
    let mean = normal_vector(&mut rng, d_max);
    let eigvals = DVector::from_fn(d_max, |_, _| standard_normal(&mut rng).abs());
    // Column-major fill: column k is the k-th raw eigenvector draw.
    let mut raw = DMatrix::zeros(d_max, d_max);
    for j in 0..d_max {
        for i in 0..d_max {
            raw[(i, j)] = standard_normal(&mut rng);
        }
    }
    let top = RawPrior {
        eigvecs: orthonormal_q(&raw),
        mean,
        eigvals,
    };

    let mut chain = Vec::with_capacity(d_max / 10);
    for d in (10..=d_max).step_by(10) {
        let raw = if d == d_max {
            RawPrior {
                mean: top.mean.clone(),
                eigvals: top.eigvals.clone(),
                eigvecs: top.eigvecs.clone(),
            }
        } else {
            RawPrior {
                mean: top.mean.rows(0, d).into_owned(),
                eigvals: top.eigvals.rows(0, d).into_owned(),
                eigvecs: orthonormal_q(&top.eigvecs.view((0, 0), (d, d)).into_owned()),
            }
        };
        chain.push((d, GaussianPrior::new(raw.mean, raw.eigvals, raw.eigvecs)?));
    }
    Ok(chain)
}
