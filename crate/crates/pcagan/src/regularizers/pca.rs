//! Principal components of generated samples and the two PCA regularizers.
//!
//! Both regularizers are differentiated through the SVD of the centered
//! sample matrix `C` (rows `x_j - mu`), with the sample mean `mu` held
//! constant. With `S = C^T C = V diag(s^2) V^T`:
//!
//! - `d s_k^2 = 2 (C v_k)^T dC v_k`;
//! - the projector `P_K = sum_{k<K} v_k v_k^T` moves only through pairs
//!   `(k < K, l >= K)`: `dP_K = sum (v_k v_l^T + v_l v_k^T) v_l^T dS v_k / (s_k^2 - s_l^2)`.
//!
//! Directions outside the thin basis have `C v = 0` and are folded in through
//! the residual of the projected vector.

use super::sample_mean;
use crate::error::{Error, Result};
use crate::linalg::canonical_sign;
use crate::netcore::{SampleLoss, SampleLossEval};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Eigenvalue-loss terms with `lambda_hat_k <= EIGVAL_FLOOR * lambda_hat_1`
/// are skipped.
pub const EIGVAL_FLOOR: f64 = 1e-10;

/// Eigen-gaps below this fraction of `s_1^2` are treated as degenerate in the
/// eigenvector-loss gradient.
const GAP_FLOOR: f64 = 1e-12;

/// How `lambda_hat_k` is scaled relative to the squared singular values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigvalScale {
    /// `lambda_hat_k = s_k^2 / P`, the per-sample variance along `v_k`, which
    /// is the scale of the `1/(P+1)` estimate it is compared against.
    #[default]
    PerSample,
    /// `lambda_hat_k = s_k^2`, the raw squared singular value.
    Literal,
}

impl EigvalScale {
    fn divisor(self, num_samples: usize) -> f64 {
        match self {
            EigvalScale::PerSample => num_samples as f64,
            EigvalScale::Literal => 1.0,
        }
    }
}

/// Top-`K` principal directions of a sample cloud.
#[derive(Debug, Clone)]
pub struct PcaEstimate {
    mean: DVector<f64>,
    requested: usize,
    rank: usize,
    centered: DMatrix<f64>,
    /// All thin right singular vectors, descending.
    basis: DMatrix<f64>,
    /// Squared singular values matching `basis`.
    sq_singular: DVector<f64>,
}

impl PcaEstimate {
    /// Sample mean used for centering; a constant for differentiation.
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Number of components actually available: `min(K, rank)`.
    pub fn num_components(&self) -> usize {
        self.requested.min(self.rank)
    }

    pub fn requested(&self) -> usize {
        self.requested
    }

    /// `K - num_components()`; non-zero when the samples span fewer than `K`
    /// directions.
    pub fn rank_deficit(&self) -> usize {
        self.requested - self.num_components()
    }

    pub fn num_samples(&self) -> usize {
        self.centered.nrows()
    }

    /// `d x K'` matrix of orthonormal components, first nonzero entry positive.
    pub fn components(&self) -> DMatrix<f64> {
        self.basis.columns(0, self.num_components()).into_owned()
    }

    pub fn component(&self, k: usize) -> DVector<f64> {
        self.basis.column(k).into_owned()
    }

    /// Squared singular values `s_k^2`, descending.
    pub fn eigvals(&self) -> DVector<f64> {
        self.sq_singular.rows(0, self.num_components()).into_owned()
    }

    pub fn scaled_eigvals(&self, scale: EigvalScale) -> DVector<f64> {
        self.eigvals() / scale.divisor(self.num_samples())
    }

    pub fn centered(&self) -> &DMatrix<f64> {
        &self.centered
    }
}

/// PCA of `samples` centered at their own mean.
pub fn pca_extract(samples: &[DVector<f64>], k: usize) -> Result<PcaEstimate> {
    if samples.is_empty() {
        return Err(Error::invalid("pca_extract needs samples"));
    }
    pca_extract_with_mean(samples, k, &sample_mean(samples))
}

/// PCA of `samples` centered at a caller-supplied (frozen) mean.
pub fn pca_extract_with_mean(samples: &[DVector<f64>], k: usize, mean: &DVector<f64>) -> Result<PcaEstimate> {
    let p = samples.len();
    if k == 0 {
        return Err(Error::invalid("number of components must be at least 1"));
    }
    if p < k + 1 {
        return Err(Error::invalid(format!(
            "pca_extract needs at least K+1 = {} samples, got {p}",
            k + 1
        )));
    }
    let d = mean.len();
    if samples.iter().any(|s| s.len() != d) {
        return Err(Error::invalid("samples and mean have different dimensions"));
    }
    let centered = DMatrix::from_fn(p, d, |j, i| samples[j][i] - mean[i]);
    // For tall sample matrices the R factor has the same singular values and
    // right singular vectors, at a fraction of the cost.
    let svd = if p > d {
        centered.clone().qr().r().svd(false, true)
    } else {
        centered.clone().svd(false, true)
    };
    let v_t = svd.v_t.expect("right singular vectors were requested");
    let r = svd.singular_values.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut basis = DMatrix::zeros(d, r);
    let mut sq_singular = DVector::zeros(r);
    for (dst, &src) in order.iter().enumerate() {
        let mut v = v_t.row(src).transpose();
        canonical_sign(&mut v);
        basis.set_column(dst, &v);
        sq_singular[dst] = svd.singular_values[src].powi(2);
    }
    let s_max = sq_singular.get(0).copied().unwrap_or(0.0).sqrt();
    let tol = s_max * (p.max(d) as f64) * f64::EPSILON;
    let rank = sq_singular.iter().filter(|s2| s2.sqrt() > tol).count();
    if rank < k {
        log::debug!("pca_extract: rank {rank} below requested K = {k}");
    }
    Ok(PcaEstimate {
        mean: mean.clone(),
        requested: k,
        rank,
        centered,
        basis,
        sq_singular,
    })
}

/// `-sum_{k<K} [v_k^T (x - mu)]^2`.
pub fn evec_loss(pca: &PcaEstimate, x: &DVector<f64>) -> f64 {
    let resid = x - pca.mean();
    -(0..pca.num_components())
        .map(|k| pca.basis.column(k).dot(&resid).powi(2))
        .sum::<f64>()
}

/// d evec_loss / d C, with the mean held fixed. Returns the gradient and the
/// number of degenerate eigen-gaps that were skipped.
///
/// Pairs of directions that are both inside the top `K` cancel, so only the
/// couplings between kept and discarded directions appear.
fn evec_centered_grad(pca: &PcaEstimate, x: &DVector<f64>) -> (DMatrix<f64>, usize) {
    let c = &pca.centered;
    let top = pca.num_components();
    let r = pca.basis.ncols();
    let lam = &pca.sq_singular;
    let resid = x - pca.mean();
    let a = pca.basis.transpose() * &resid;
    let resid_perp = &resid - &pca.basis * &a;
    let gap_floor = GAP_FLOOR * lam[0].max(f64::MIN_POSITIVE);
    let v_top = pca.basis.columns(0, top);
    let v_rest = pca.basis.columns(top, r - top);

    let mut skipped = 0;
    let omega = DMatrix::from_fn(r - top, top, |l, k| {
        let gap = lam[k] - lam[top + l];
        if gap <= gap_floor {
            skipped += 1;
            0.0
        } else {
            2.0 * a[k] * a[top + l] / gap
        }
    });
    // Coefficients multiplying (C v_k) on the left, one column per k.
    let mut coef = v_rest * &omega;
    for k in 0..top {
        if lam[k] > gap_floor {
            coef.column_mut(k).axpy(2.0 * a[k] / lam[k], &resid_perp, 1.0);
        }
    }
    let mut grad = (c * v_top) * coef.transpose();
    if r > top {
        grad += (c * v_rest) * omega * v_top.transpose();
    }
    (-grad, skipped)
}

/// Result of the eigenvalue loss with its stop-gradient targets.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalLossValue {
    pub value: f64,
    /// `lambda_hat_k` after scaling.
    pub lambda_hat: Vec<f64>,
    /// `(1/(P+1)) |v_k^T X~|^2`, the stop-gradient eigenvalue targets.
    pub lambda_tilde: Vec<f64>,
    /// Terms dropped by the `lambda_hat` floor.
    pub skipped: usize,
}

fn lambda_tilde(pca: &PcaEstimate, x: &DVector<f64>, samples: &[DVector<f64>]) -> Vec<f64> {
    let mean = pca.mean();
    let denom = (samples.len() + 1) as f64;
    let v = pca.basis.columns(0, pca.num_components());
    let centered = DMatrix::from_fn(samples.len(), mean.len(), |j, i| samples[j][i] - mean[i]);
    let proj = centered * v;
    let proj_x = v.transpose() * (x - mean);
    (0..v.ncols())
        .map(|k| (proj_x[k].powi(2) + proj.column(k).norm_squared()) / denom)
        .collect()
}

fn eval_terms(pca: &PcaEstimate, tilde: &[f64], scale: EigvalScale) -> EvalLossValue {
    let hat: Vec<f64> = pca.scaled_eigvals(scale).iter().copied().collect();
    let floor = EIGVAL_FLOOR * hat.first().copied().unwrap_or(0.0);
    let mut value = 0.0;
    let mut skipped = 0;
    for (h, t) in hat.iter().zip(tilde) {
        if *h <= floor || *h <= 0.0 {
            skipped += 1;
            continue;
        }
        value += (1.0 - t / h).powi(2);
    }
    EvalLossValue {
        value,
        lambda_hat: hat,
        lambda_tilde: tilde.to_vec(),
        skipped,
    }
}

/// `sum_k (1 - lambda_tilde_k / lambda_hat_k)^2`, where `lambda_tilde_k`
/// averages `[v_k^T (u - mu)]^2` over `u` in `{x, samples...}`.
pub fn eval_loss(pca: &PcaEstimate, x: &DVector<f64>, samples: &[DVector<f64>], scale: EigvalScale) -> EvalLossValue {
    eval_terms(pca, &lambda_tilde(pca, x, samples), scale)
}

/// d eval_loss / d C through `lambda_hat` only.
fn eval_centered_grad(pca: &PcaEstimate, terms: &EvalLossValue, scale: EigvalScale) -> DMatrix<f64> {
    let c = &pca.centered;
    let divisor = scale.divisor(pca.num_samples());
    let floor = EIGVAL_FLOOR * terms.lambda_hat.first().copied().unwrap_or(0.0);
    let top = terms.lambda_hat.len();
    let v = pca.basis.columns(0, top);
    let weights = DVector::from_iterator(
        top,
        terms.lambda_hat.iter().zip(&terms.lambda_tilde).map(|(h, t)| {
            if *h <= floor || *h <= 0.0 {
                0.0
            } else {
                2.0 * (1.0 - t / h) * (t / (h * h)) * 2.0 / divisor
            }
        }),
    );
    let mut cv = c * v;
    for (k, w) in weights.iter().enumerate() {
        cv.column_mut(k).scale_mut(*w);
    }
    cv * v.transpose()
}

/// Quantities that may be pinned to constants instead of being recomputed
/// from the current samples. Leaving a field `None` computes it live; either
/// way it is never differentiated.
#[derive(Debug, Clone, Default)]
pub struct PcaStopGrad {
    pub mean: Option<DVector<f64>>,
    pub lambda_tilde: Option<Vec<f64>>,
}

/// Weighted eigenvector and eigenvalue losses for one measurement.
#[derive(Debug, Clone)]
pub struct PcaLoss {
    pub x: DVector<f64>,
    pub k: usize,
    pub beta_pca: f64,
    pub use_evec: bool,
    pub use_eval: bool,
    pub scale: EigvalScale,
    pub frozen: PcaStopGrad,
}

impl SampleLoss for PcaLoss {
    fn evaluate(&self, _y: &DVector<f64>, samples: &[DVector<f64>]) -> SampleLossEval {
        let mean = self.frozen.mean.clone().unwrap_or_else(|| sample_mean(samples));
        let pca = pca_extract_with_mean(samples, self.k, &mean).expect("PCA sample count validated by the caller");
        let mut grad_c = DMatrix::zeros(samples.len(), mean.len());
        let (mut evec_value, mut eval_value) = (0.0, 0.0);
        if self.use_evec {
            evec_value = evec_loss(&pca, &self.x);
            let (g, skipped) = evec_centered_grad(&pca, &self.x);
            if skipped > 0 {
                log::debug!("evec loss: skipped {skipped} degenerate eigen-gaps");
            }
            grad_c += g;
        }
        if self.use_eval {
            let tilde = match &self.frozen.lambda_tilde {
                Some(t) => t.clone(),
                None => lambda_tilde(&pca, &self.x, samples),
            };
            let terms = eval_terms(&pca, &tilde, self.scale);
            if terms.skipped > 0 {
                log::debug!("eval loss: skipped {} terms below the eigenvalue floor", terms.skipped);
            }
            eval_value = terms.value;
            grad_c += eval_centered_grad(&pca, &terms, self.scale);
        }
        grad_c *= self.beta_pca;
        SampleLossEval {
            value: self.beta_pca * (evec_value + eval_value),
            sample_grads: grad_c.row_iter().map(|r| r.transpose()).collect(),
            parts: vec![
                ("evec", self.beta_pca * evec_value),
                ("eval", self.beta_pca * eval_value),
            ],
        }
    }
}
