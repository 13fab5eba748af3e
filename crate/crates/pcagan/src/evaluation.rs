//! Metrics against the analytic posterior.
//!
//! All sample draws use `stream(seed, domain, i)` for the `i`-th measurement,
//! so a metric computed twice on the same inputs is bit-identical and two
//! samplers compared under the same [`Streams`] see the same code draws.

use crate::error::{Error, Result};
use crate::gaussian_world::{w2_from_parts, GaussianDist, GaussianPrior, PosteriorOperator};
use crate::netcore::AffineGenerator;
use crate::regularizers::pca_extract;
use crate::rng::{normal_vector, stream, Domain};
use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use serde::{Deserialize, Serialize};

/// Anything that draws `x ~ q(x | y)`.
pub trait ConditionalSampler: Sync {
    fn dim(&self) -> usize;

    fn sample(&self, y: &DVector<f64>, rng: &mut dyn RngCore) -> DVector<f64>;

    /// `n` samples as the columns of a `dim x n` matrix, drawn in order.
    fn sample_matrix(&self, y: &DVector<f64>, n: usize, rng: &mut dyn RngCore) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim(), n);
        for j in 0..n {
            out.set_column(j, &self.sample(y, rng));
        }
        out
    }
}

impl ConditionalSampler for AffineGenerator {
    fn dim(&self) -> usize {
        AffineGenerator::dim(self)
    }

    fn sample(&self, y: &DVector<f64>, rng: &mut dyn RngCore) -> DVector<f64> {
        AffineGenerator::sample(self, y, rng)
    }

    fn sample_matrix(&self, y: &DVector<f64>, n: usize, rng: &mut dyn RngCore) -> DMatrix<f64> {
        let dz = self.code_dim();
        let mut codes = DMatrix::zeros(dz, n);
        for j in 0..n {
            codes.set_column(j, &normal_vector(rng, dz));
        }
        let mut out = self.b_matrix() * codes;
        let offset = self.offset(y);
        for mut col in out.column_iter_mut() {
            col += &offset;
        }
        out
    }
}

/// Draws from the exact posterior: `mu_{x|y} + Sigma_{x|y}^{1/2} n`.
pub struct ExactPosteriorSampler<'a> {
    pub posterior: &'a PosteriorOperator,
}

impl ConditionalSampler for ExactPosteriorSampler<'_> {
    fn dim(&self) -> usize {
        self.posterior.dim()
    }

    fn sample(&self, y: &DVector<f64>, rng: &mut dyn RngCore) -> DVector<f64> {
        let n = normal_vector(rng, self.dim());
        self.posterior.mean(y).expect("dimension checked by caller") + self.posterior.cov_sqrt() * n
    }
}

/// Ignores `y` and draws from a fixed Gaussian.
pub struct PriorSampler<'a> {
    pub prior: &'a GaussianPrior,
}

impl ConditionalSampler for PriorSampler<'_> {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn sample(&self, _y: &DVector<f64>, rng: &mut dyn RngCore) -> DVector<f64> {
        self.prior.sample(rng)
    }
}

/// Where per-measurement random streams come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    pub seed: u64,
    pub domain: Domain,
}

impl Streams {
    pub fn new(seed: u64, domain: Domain) -> Self {
        Self { seed, domain }
    }

    fn rng(&self, index: usize) -> crate::rng::StreamRng {
        stream(self.seed, self.domain, index as u64)
    }
}

/// Mean and unbiased covariance of the columns of `samples`.
pub fn moments(samples: &DMatrix<f64>) -> Result<GaussianDist> {
    let n = samples.ncols();
    if n < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 samples for a covariance, got {n}"
        )));
    }
    // Shift by the first sample so identical samples give an exactly zero covariance.
    let origin = samples.column(0).into_owned();
    let mut shifted = samples.clone();
    for mut col in shifted.column_iter_mut() {
        col -= &origin;
    }
    let shift_mean = shifted.column_mean();
    for mut col in shifted.column_iter_mut() {
        col -= &shift_mean;
    }
    let cov = (&shifted * shifted.transpose()) / (n as f64 - 1.0);
    let cov = (&cov + cov.transpose()) * 0.5;
    GaussianDist::new(origin + shift_mean, cov)
}

/// Sample mean and unbiased sample covariance of `n` draws from `sampler`.
pub fn empirical_stats(
    sampler: &dyn ConditionalSampler,
    y: &DVector<f64>,
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<GaussianDist> {
    if n < 2 {
        return Err(Error::invalid(format!("empirical_stats needs n >= 2, got {n}")));
    }
    crate::error::ensure_dim("measurement", y.len(), sampler.dim())?;
    moments(&sampler.sample_matrix(y, n, rng))
}

/// Comparison of one empirical conditional Gaussian with the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorComparison {
    pub w2: f64,
    pub trace_ratio: f64,
    pub alignment: Vec<f64>,
    pub eigval_relerr: Vec<f64>,
}

/// Compares `estimate` with `N(mu_{x|y}, Sigma_{x|y})` on the top `k` eigenpairs.
pub fn compare_to_posterior(
    posterior: &PosteriorOperator,
    true_mean: &DVector<f64>,
    estimate: &GaussianDist,
    k: usize,
) -> PosteriorComparison {
    let true_trace = posterior.cov().trace();
    let w2 = w2_from_parts(true_mean, true_trace, posterior.cov_sqrt(), estimate);
    let k = k.min(estimate.dim());
    let alignment = (0..k)
        .map(|i| {
            estimate
                .eigvecs()
                .column(i)
                .dot(&posterior.eigvecs().column(i))
                .abs()
                .min(1.0)
        })
        .collect();
    let eigval_relerr = (0..k)
        .map(|i| {
            let truth = posterior.eigvals()[i];
            (estimate.eigvals()[i] - truth).abs() / truth.max(f64::MIN_POSITIVE)
        })
        .collect();
    PosteriorComparison {
        w2,
        trace_ratio: estimate.trace() / true_trace,
        alignment,
        eigval_relerr,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct W2Report {
    pub mean_w2: f64,
    pub w2_per_y: Vec<f64>,
    /// Measurements whose empirical covariance could not be formed.
    pub excluded: usize,
}

fn check_excluded(excluded: usize, total: usize) -> Result<()> {
    if excluded * 100 > total {
        Err(Error::numerical(format!(
            "{excluded} of {total} measurements failed; more than 1% excluded"
        )))
    } else {
        Ok(())
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Average W2 between the analytic posterior and `n_samples` empirical
/// moments of `sampler`, over the measurements `ys`.
pub fn eval_w2(
    sampler: &dyn ConditionalSampler,
    posterior: &PosteriorOperator,
    ys: &[DVector<f64>],
    n_samples: usize,
    streams: Streams,
) -> Result<W2Report> {
    if ys.is_empty() {
        return Err(Error::invalid("eval_w2 needs at least one measurement"));
    }
    let mut per_y = Vec::with_capacity(ys.len());
    let mut excluded = 0;
    for (i, y) in ys.iter().enumerate() {
        let truth = posterior.mean(y)?;
        match empirical_stats(sampler, y, n_samples, &mut streams.rng(i)) {
            Ok(est) => per_y.push(w2_from_parts(
                &truth,
                posterior.cov().trace(),
                posterior.cov_sqrt(),
                &est,
            )),
            Err(Error::InvalidArgument(msg)) if n_samples >= 2 => {
                log::warn!("eval_w2: measurement {i} excluded: {msg}");
                excluded += 1;
            }
            Err(e) => return Err(e),
        }
    }
    check_excluded(excluded, ys.len())?;
    Ok(W2Report {
        mean_w2: mean(&per_y),
        w2_per_y: per_y,
        excluded,
    })
}

/// `E |(I - V_K V_K^T)(x - mu_hat)|_2`, with `mu_hat` and `V_K` from
/// `n_samples` draws per measurement. `k = 0` gives rMSE.
pub fn rem_k(
    sampler: &dyn ConditionalSampler,
    pairs: &[(DVector<f64>, DVector<f64>)],
    k: usize,
    n_samples: usize,
    streams: Streams,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("rem_k needs at least one pair"));
    }
    if n_samples < k + 1 || n_samples < 1 {
        return Err(Error::invalid(format!("rem_k needs at least K+1 = {} samples", k + 1)));
    }
    let mut total = 0.0;
    for (i, (x, y)) in pairs.iter().enumerate() {
        let draws = sampler.sample_matrix(y, n_samples, &mut streams.rng(i));
        let mu = draws.column_mean();
        let err = x - &mu;
        let resid = if k == 0 {
            err
        } else {
            let cols: Vec<DVector<f64>> = draws.column_iter().map(|c| c.into_owned()).collect();
            let pca = pca_extract(&cols, k)?;
            let v = pca.components();
            &err - &v * (v.transpose() * &err)
        };
        total += resid.norm();
    }
    Ok(total / pairs.len() as f64)
}

/// `E |x - mu_hat|_2` with `mu_hat` the mean of `n_samples` draws.
pub fn rmse(
    sampler: &dyn ConditionalSampler,
    pairs: &[(DVector<f64>, DVector<f64>)],
    n_samples: usize,
    streams: Streams,
) -> Result<f64> {
    rem_k(sampler, pairs, 0, n_samples, streams)
}

/// Source of the reference conditional moments for [`cfid_raw`].
pub enum CfidReference<'a> {
    /// Exact posterior moments; the metric then coincides with [`eval_w2`].
    Analytic(&'a PosteriorOperator),
    /// Empirical moments of `n` draws from a reference sampler per measurement.
    Samples {
        sampler: &'a dyn ConditionalSampler,
        n: usize,
        streams: Streams,
    },
}

/// Conditional Frechet distance on raw vectors: per-measurement Gaussian
/// W2 between generated and reference moments, averaged over `ys`.
pub fn cfid_raw(
    sampler: &dyn ConditionalSampler,
    reference: &CfidReference<'_>,
    ys: &[DVector<f64>],
    n_samples: usize,
    streams: Streams,
) -> Result<f64> {
    match reference {
        CfidReference::Analytic(op) => Ok(eval_w2(sampler, op, ys, n_samples, streams)?.mean_w2),
        CfidReference::Samples {
            sampler: reference,
            n,
            streams: ref_streams,
        } => {
            if ys.is_empty() {
                return Err(Error::invalid("cfid_raw needs at least one measurement"));
            }
            let mut total = 0.0;
            for (i, y) in ys.iter().enumerate() {
                let gen = empirical_stats(sampler, y, n_samples, &mut streams.rng(i))?;
                let refd = empirical_stats(*reference, y, *n, &mut ref_streams.rng(i))?;
                total += w2_from_parts(refd.mean(), refd.trace(), &refd.cov_sqrt(), &gen);
            }
            Ok(total / ys.len() as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    /// Principal components compared and used for REM_K.
    pub k: usize,
    /// Samples per measurement for W2 and moment estimates.
    pub n_samples: usize,
    /// Samples per measurement for REM_K and rMSE.
    pub rem_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_w2: f64,
    pub w2_per_y: Vec<f64>,
    pub trace_ratio: f64,
    pub alignment: Vec<f64>,
    pub eigval_relerr: Vec<f64>,
    pub rem_k: f64,
    pub rmse: f64,
    /// Raw-vector CFID against sample moments of the exact posterior.
    pub cfid_raw: f64,
    pub excluded: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    pub fn write_per_y_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["index", "w2"])?;
        for (i, v) in self.w2_per_y.iter().enumerate() {
            w.write_record([i.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Averages of a set of per-measurement comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonSummary {
    pub mean_w2: f64,
    pub w2_per_y: Vec<f64>,
    pub trace_ratio: f64,
    pub alignment: Vec<f64>,
    pub eigval_relerr: Vec<f64>,
    pub excluded: usize,
}

/// Empirical moments for every `y`, compared with the analytic posterior.
pub fn summarize(
    sampler: &dyn ConditionalSampler,
    posterior: &PosteriorOperator,
    ys: &[DVector<f64>],
    k: usize,
    n_samples: usize,
    streams: Streams,
) -> Result<ComparisonSummary> {
    if ys.is_empty() {
        return Err(Error::invalid("no measurements to evaluate"));
    }
    let mut comps = Vec::with_capacity(ys.len());
    let mut excluded = 0;
    for (i, y) in ys.iter().enumerate() {
        let truth = posterior.mean(y)?;
        match empirical_stats(sampler, y, n_samples, &mut streams.rng(i)) {
            Ok(est) => comps.push(compare_to_posterior(posterior, &truth, &est, k)),
            Err(Error::InvalidArgument(msg)) if n_samples >= 2 => {
                log::warn!("measurement {i} excluded: {msg}");
                excluded += 1;
            }
            Err(e) => return Err(e),
        }
    }
    check_excluded(excluded, ys.len())?;
    let n = comps.len() as f64;
    let kk = comps.first().map_or(0, |c| c.alignment.len());
    let avg_vec = |f: &dyn Fn(&PosteriorComparison) -> &Vec<f64>| -> Vec<f64> {
        (0..kk)
            .map(|i| comps.iter().map(|c| f(c)[i]).sum::<f64>() / n)
            .collect()
    };
    let w2_per_y: Vec<f64> = comps.iter().map(|c| c.w2).collect();
    Ok(ComparisonSummary {
        mean_w2: mean(&w2_per_y),
        trace_ratio: comps.iter().map(|c| c.trace_ratio).sum::<f64>() / n,
        alignment: avg_vec(&|c| &c.alignment),
        eigval_relerr: avg_vec(&|c| &c.eigval_relerr),
        w2_per_y,
        excluded,
    })
}

/// Full report for a sampler on held-out `(x, y)` pairs.
pub fn evaluate(
    sampler: &dyn ConditionalSampler,
    posterior: &PosteriorOperator,
    pairs: &[(DVector<f64>, DVector<f64>)],
    settings: &EvalSettings,
) -> Result<EvalReport> {
    let ys: Vec<DVector<f64>> = pairs.iter().map(|(_, y)| y.clone()).collect();
    let streams = Streams::new(settings.seed, Domain::Evaluation);
    let summary = summarize(sampler, posterior, &ys, settings.k, settings.n_samples, streams)?;
    let rem_streams = Streams::new(settings.seed ^ 0x5245_4d00, Domain::Evaluation);
    let rem = rem_k(sampler, pairs, settings.k, settings.rem_samples, rem_streams)?;
    let rm = rmse(sampler, pairs, settings.rem_samples, rem_streams)?;
    let exact = ExactPosteriorSampler { posterior };
    let reference = CfidReference::Samples {
        sampler: &exact,
        n: settings.n_samples,
        streams: Streams::new(settings.seed ^ 0x4346_4944, Domain::Evaluation),
    };
    let cfid = cfid_raw(sampler, &reference, &ys, settings.n_samples, streams)?;
    Ok(EvalReport {
        mean_w2: summary.mean_w2,
        w2_per_y: summary.w2_per_y,
        trace_ratio: summary.trace_ratio,
        alignment: summary.alignment,
        eigval_relerr: summary.eigval_relerr,
        rem_k: rem,
        rmse: rm,
        cfid_raw: cfid,
        excluded: summary.excluded,
    })
}
