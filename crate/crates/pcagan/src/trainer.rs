//! The generator/critic training loop.
//!
//! Each batch runs `n_disc` critic updates followed by one generator update.
//! The generator loss is averaged over the batch (summed with
//! `batch_reduction = "sum"`). It has the rcGAN terms always, the
//! eigenvector term when `epoch >= e_evec` and `step % M == 0`, and the
//! eigenvalue term when `epoch >= e_eval` and `step % M == 0`.
//!
//! The step counter `s` is global across epochs and 1-based: it is
//! incremented before each generator update, so the first update is `s = 1`
//! and the first lazy step is `s = M`. Epochs are 0-based.
//!
//! Random streams:
//!
//! | draw | stream |
//! |---|---|
//! | generator codes at step `s` | `(seed, GeneratorCodes, s)` |
//! | PCA codes at step `s` | `(seed, PcaCodes, s)` |
//! | critic codes and interpolation weights | `(seed, DiscriminatorCodes, critic step)` |
//! | batch order in epoch `e` | `(seed, Shuffle, e)` |
//! | validation samples for measurement `i` | `(seed, Validation, i)` |
//! | SD monitor samples for measurement `i` | `(seed, SdMonitor, i)` |
//! | initial weights | `(seed, Init, 0)` then `(seed, Init, 1)` |
//!
//! Because the PCA codes have their own stream, skipping the PCA terms does
//! not shift any other draw.

use crate::datakit::{DatasetHandle, Pair};
use crate::error::{Error, Result};
use crate::evaluation::{summarize, Streams};
use crate::gaussian_world::PosteriorOperator;
use crate::netcore::{
    AdamSettings, AdamState, AffineGenerator, Checkpoint, GeneratorObjective, GeneratorTerm, LinearDiscriminator,
    CHECKPOINT_FORMAT_VERSION,
};
use crate::regularizers::{
    AdvGenLoss, DiscriminatorObjective, DiscriminatorSample, EigvalScale, PcaLoss, PcaStopGrad, RcLoss, SdController,
    SdSettings, SdStats,
};
use crate::rng::{normal_vector, stream, Domain};
use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub enum Mode {
    #[default]
    #[serde(rename = "pcaGAN")]
    PcaGan,
    /// The rcGAN baseline: the PCA terms are never computed.
    #[serde(rename = "rcGAN")]
    RcGan,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::PcaGan => "pcaGAN",
            Mode::RcGan => "rcGAN",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pcaGAN" | "pcagan" => Ok(Mode::PcaGan),
            "rcGAN" | "rcgan" => Ok(Mode::RcGan),
            other => Err(Error::invalid(format!(
                "unknown mode {other:?} (expected pcaGAN or rcGAN)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationSettings {
    /// Held-out measurements scored each epoch.
    pub num_measurements: usize,
    /// Generated samples per measurement, as a multiple of `d`.
    pub samples_per_dim: usize,
    /// Validation pairs used to measure the SD controller's ratio.
    pub sd_monitor_pairs: usize,
}

impl Default for ValidationSettings {
    fn default() -> Self {
        Self {
            num_measurements: 200,
            samples_per_dim: 10,
            sd_monitor_pairs: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DivergenceSettings {
    /// Validation W2 above `factor` times the untrained value counts as a bad epoch.
    pub factor: f64,
    /// Consecutive bad epochs before the run is aborted.
    pub patience: usize,
}

impl Default for DivergenceSettings {
    fn default() -> Self {
        Self {
            factor: 1e3,
            patience: 3,
        }
    }
}

/// How per-measurement generator losses are combined over a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchReduction {
    #[default]
    Mean,
    Sum,
}

/// Training hyperparameters. Optional fields are filled in from the problem
/// dimension by [`TrainConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Principal components regularized; `None` means `d`.
    pub k: Option<usize>,
    pub p_rc: usize,
    /// Samples for the PCA terms; `None` means `10 K`.
    pub p_pca: Option<usize>,
    /// Lazy period `M` in generator steps.
    pub lazy_period: u64,
    pub e_evec: usize,
    /// `None` means `e_evec + 25`.
    pub e_eval: Option<usize>,
    pub beta_adv: f64,
    pub beta_pca: f64,
    pub sd: SdSettings,
    pub gp_weight: f64,
    pub n_disc: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub generator_optimizer: AdamSettings,
    pub discriminator_optimizer: AdamSettings,
    /// Code dimension; `None` means `d`.
    pub code_dim: Option<usize>,
    pub eigval_scale: EigvalScale,
    pub batch_reduction: BatchReduction,
    pub validation: ValidationSettings,
    pub divergence: DivergenceSettings,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::PcaGan,
            k: None,
            p_rc: 2,
            p_pca: None,
            lazy_period: 100,
            e_evec: 10,
            e_eval: None,
            beta_adv: 1e-5,
            beta_pca: 1e-2,
            sd: SdSettings::default(),
            gp_weight: 10.0,
            n_disc: 1,
            epochs: 100,
            batch_size: 64,
            generator_optimizer: AdamSettings::default(),
            discriminator_optimizer: AdamSettings::default(),
            code_dim: None,
            eigval_scale: EigvalScale::PerSample,
            batch_reduction: BatchReduction::Mean,
            validation: ValidationSettings::default(),
            divergence: DivergenceSettings::default(),
            seed: 0,
        }
    }
}

/// A [`TrainConfig`] with every default applied for a given dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub dim: usize,
    pub mode: Mode,
    pub k: usize,
    pub p_rc: usize,
    pub p_pca: usize,
    pub lazy_period: u64,
    pub e_evec: usize,
    pub e_eval: usize,
    pub beta_adv: f64,
    pub beta_pca: f64,
    pub sd: SdSettings,
    pub sd_monitor_p: usize,
    pub gp_weight: f64,
    pub n_disc: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub generator_optimizer: AdamSettings,
    pub discriminator_optimizer: AdamSettings,
    pub code_dim: usize,
    pub eigval_scale: EigvalScale,
    pub batch_reduction: BatchReduction,
    pub validation: ValidationSettings,
    pub divergence: DivergenceSettings,
    pub seed: u64,
}

impl TrainConfig {
    pub fn resolve(&self, dim: usize) -> Result<ResolvedConfig> {
        if dim == 0 {
            return Err(Error::invalid("problem dimension must be positive"));
        }
        let k = self.k.unwrap_or(dim);
        if k == 0 || k > dim {
            return Err(Error::invalid(format!("K must be in 1..={dim}, got {k}")));
        }
        let p_pca = self.p_pca.unwrap_or(10 * k);
        if p_pca < k + 1 {
            return Err(Error::invalid(format!(
                "P_pca must be at least K+1 = {}, got {p_pca}",
                k + 1
            )));
        }
        if self.p_rc < 2 {
            return Err(Error::invalid(format!("P_rc must be at least 2, got {}", self.p_rc)));
        }
        let e_eval = self.e_eval.unwrap_or(self.e_evec + 25);
        if e_eval < self.e_evec {
            return Err(Error::invalid(format!(
                "E_eval ({e_eval}) must be >= E_evec ({})",
                self.e_evec
            )));
        }
        if self.lazy_period == 0 {
            return Err(Error::invalid("lazy period M must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        for (name, w) in [
            ("beta_adv", self.beta_adv),
            ("beta_pca", self.beta_pca),
            ("gp_weight", self.gp_weight),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!(
                    "{name} must be a finite non-negative number, got {w}"
                )));
            }
        }
        let code_dim = self.code_dim.unwrap_or(dim);
        if code_dim == 0 {
            return Err(Error::invalid("code dimension must be positive"));
        }
        if self.validation.num_measurements == 0 || self.validation.samples_per_dim == 0 {
            return Err(Error::invalid(
                "validation needs at least one measurement and one sample per dimension",
            ));
        }
        if self.validation.samples_per_dim * dim < 2 {
            return Err(Error::invalid("validation needs at least 2 samples per measurement"));
        }
        self.generator_optimizer.validate()?;
        self.discriminator_optimizer.validate()?;
        let sd_monitor_p = self.sd.monitor_p.unwrap_or(self.p_rc);
        SdController::new(&self.sd, sd_monitor_p)?;
        Ok(ResolvedConfig {
            dim,
            mode: self.mode,
            k,
            p_rc: self.p_rc,
            p_pca,
            lazy_period: self.lazy_period,
            e_evec: self.e_evec,
            e_eval,
            beta_adv: self.beta_adv,
            beta_pca: if self.mode == Mode::RcGan { 0.0 } else { self.beta_pca },
            sd: self.sd,
            sd_monitor_p,
            gp_weight: self.gp_weight,
            n_disc: self.n_disc,
            epochs: self.epochs,
            batch_size: self.batch_size,
            generator_optimizer: self.generator_optimizer,
            discriminator_optimizer: self.discriminator_optimizer,
            code_dim,
            eigval_scale: self.eigval_scale,
            batch_reduction: self.batch_reduction,
            validation: self.validation,
            divergence: self.divergence,
            seed: self.seed,
        })
    }
}

impl ResolvedConfig {
    /// SHA-256 of the compact JSON form.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("configs always serialize");
        hex::encode(Sha256::digest(json))
    }

    pub fn validation_samples(&self) -> usize {
        self.validation.samples_per_dim * self.dim
    }

    /// Whether the eigenvector and eigenvalue terms run at `(epoch, step)`.
    pub fn pca_gates(&self, epoch: usize, step: u64) -> (bool, bool) {
        if self.mode == Mode::RcGan || !step.is_multiple_of(self.lazy_period) {
            return (false, false);
        }
        (epoch >= self.e_evec, epoch >= self.e_eval)
    }

    /// Generator steps per epoch for `n` training pairs.
    pub fn steps_per_epoch(&self, n: usize) -> u64 {
        n.div_ceil(self.batch_size) as u64
    }
}

/// Number of multiples of `m` in `(start, start + n]`.
pub fn lazy_step_count(start: u64, n: u64, m: u64) -> u64 {
    (start + n) / m - start / m
}

/// Networks, optimizer states and counters between updates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub generator: AffineGenerator,
    pub discriminator: LinearDiscriminator,
    pub generator_adam: AdamState,
    pub discriminator_adam: AdamState,
    pub sd: SdController,
    /// 0-based epoch in progress.
    pub epoch: usize,
    /// Generator updates taken so far.
    pub step: u64,
    /// Critic updates taken so far.
    pub disc_steps: u64,
}

impl TrainState {
    pub fn init(cfg: &ResolvedConfig) -> Result<Self> {
        let generator = AffineGenerator::init(cfg.dim, cfg.code_dim, &mut stream(cfg.seed, Domain::Init, 0))?;
        let discriminator = LinearDiscriminator::init(cfg.dim, &mut stream(cfg.seed, Domain::Init, 1))?;
        Ok(Self {
            generator_adam: AdamState::new(generator.params().len(), cfg.generator_optimizer),
            discriminator_adam: AdamState::new(discriminator.params().len(), cfg.discriminator_optimizer),
            generator,
            discriminator,
            sd: SdController::new(&cfg.sd, cfg.sd_monitor_p)?,
            epoch: 0,
            step: 0,
            disc_steps: 0,
        })
    }

    pub fn checkpoint(&self, cfg: &ResolvedConfig) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            dim: cfg.dim,
            code_dim: cfg.code_dim,
            epoch: self.epoch,
            config_hash: cfg.config_hash(),
            generator: self.generator.params().clone(),
            discriminator: self.discriminator.params().clone(),
            generator_adam: self.generator_adam.clone(),
            discriminator_adam: self.discriminator_adam.clone(),
        }
    }
}

/// Steps at which each PCA term was evaluated.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleAudit {
    pub evec_steps: Vec<(usize, u64)>,
    pub eval_steps: Vec<(usize, u64)>,
}

/// What one generator update computed.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorStepReport {
    pub step: u64,
    pub loss: f64,
    /// Summed named components: `adv`, `l1`, `sd`, and `evec`/`eval` when active.
    pub parts: Vec<(&'static str, f64)>,
    pub evec: bool,
    pub eval: bool,
}

impl GeneratorStepReport {
    pub fn part(&self, name: &str) -> f64 {
        self.parts.iter().find(|(n, _)| *n == name).map_or(0.0, |p| p.1)
    }
}

/// The generator loss at the current parameters for `batch` and step `step`,
/// with the codes that a generator update would draw at that step.
pub fn generator_objective(
    cfg: &ResolvedConfig,
    state: &TrainState,
    batch: &[&Pair],
    step: u64,
) -> Result<(GeneratorObjective, bool, bool)> {
    let (evec, eval) = cfg.pca_gates(state.epoch, step);
    let mut code_rng = stream(cfg.seed, Domain::GeneratorCodes, step);
    let mut pca_rng = stream(cfg.seed, Domain::PcaCodes, step);
    let scale = match cfg.batch_reduction {
        BatchReduction::Mean => 1.0 / batch.len().max(1) as f64,
        BatchReduction::Sum => 1.0,
    };
    let mut objective = GeneratorObjective::new(cfg.dim, cfg.code_dim, scale);
    for (x, y) in batch.iter().map(|p| (&p.0, &p.1)) {
        let codes = (0..cfg.p_rc)
            .map(|_| normal_vector(&mut code_rng, cfg.code_dim))
            .collect();
        objective.push(GeneratorTerm {
            y: y.clone(),
            codes,
            loss: Box::new(RcLoss {
                x: x.clone(),
                adversarial: AdvGenLoss {
                    critic: state.discriminator.clone(),
                    beta_adv: cfg.beta_adv,
                },
                beta_sd: state.sd.beta_sd,
            }),
        })?;
        if evec || eval {
            let codes = (0..cfg.p_pca)
                .map(|_| normal_vector(&mut pca_rng, cfg.code_dim))
                .collect();
            objective.push(GeneratorTerm {
                y: y.clone(),
                codes,
                loss: Box::new(PcaLoss {
                    x: x.clone(),
                    k: cfg.k,
                    beta_pca: cfg.beta_pca,
                    use_evec: evec,
                    use_eval: eval,
                    scale: cfg.eigval_scale,
                    frozen: PcaStopGrad::default(),
                }),
            })?;
        }
    }
    Ok((objective, evec, eval))
}

/// One generator update on `batch`.
pub fn generator_step(
    cfg: &ResolvedConfig,
    state: &mut TrainState,
    batch: &[&Pair],
    audit: &mut ScheduleAudit,
) -> Result<GeneratorStepReport> {
    let step = state.step + 1;
    let (objective, evec, eval) = generator_objective(cfg, state, batch, step)?;
    let (loss, grad, parts) = objective.evaluate(state.generator.params().values());
    if !loss.is_finite() {
        return Err(Error::numerical(format!(
            "non-finite generator loss {loss} at step {step}; parts {parts:?}"
        )));
    }
    state
        .generator_adam
        .apply(state.generator.params_mut().values_mut(), &grad)?;
    state.step = step;
    if evec {
        audit.evec_steps.push((state.epoch, step));
    }
    if eval {
        audit.eval_steps.push((state.epoch, step));
    }
    Ok(GeneratorStepReport {
        step,
        loss,
        parts,
        evec,
        eval,
    })
}

/// The critic loss for the next critic update on `batch`.
pub fn discriminator_objective(cfg: &ResolvedConfig, state: &TrainState, batch: &[&Pair]) -> DiscriminatorObjective {
    let mut rng = stream(cfg.seed, Domain::DiscriminatorCodes, state.disc_steps + 1);
    let samples = batch
        .iter()
        .map(|(x, y)| {
            let codes: Vec<DVector<f64>> = (0..cfg.p_rc).map(|_| normal_vector(&mut rng, cfg.code_dim)).collect();
            let eps: f64 = rng.random();
            DiscriminatorSample::new(x.clone(), y.clone(), state.generator.forward_many(y, &codes), eps)
        })
        .collect();
    DiscriminatorObjective {
        dim: cfg.dim,
        gp_weight: cfg.gp_weight,
        samples,
    }
}

/// One critic update; returns `(wasserstein term, gradient penalty)`.
pub fn discriminator_step(cfg: &ResolvedConfig, state: &mut TrainState, batch: &[&Pair]) -> Result<(f64, f64)> {
    let objective = discriminator_objective(cfg, state, batch);
    let (loss, grad, split) = objective.evaluate(state.discriminator.params().values());
    if !loss.is_finite() {
        return Err(Error::numerical(format!(
            "non-finite critic loss {loss} at critic step {}",
            state.disc_steps + 1
        )));
    }
    state
        .discriminator_adam
        .apply(state.discriminator.params_mut().values_mut(), &grad)?;
    state.disc_steps += 1;
    Ok(split)
}

/// One row of the training log. Row 0 scores the untrained networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    /// Epochs completed.
    pub epoch: usize,
    pub val_w2: f64,
    pub val_w2_per_d: f64,
    pub trace_ratio: f64,
    pub alignment: Vec<f64>,
    pub eigval_relerr: Vec<f64>,
    /// Per-step means of the generator loss components.
    pub adv: f64,
    pub l1: f64,
    pub sd: f64,
    pub evec: f64,
    pub eval: f64,
    /// Per-step means of the critic loss components.
    pub disc_wasserstein: f64,
    pub disc_gp: f64,
    /// `beta_sd` used during the epoch.
    pub beta_sd: f64,
    /// Ratio measured at the end of the epoch.
    pub sd_rho: Option<f64>,
}

fn positive_zero(v: f64) -> f64 {
    v + 0.0
}

impl EpochRow {
    pub fn alignment_mean(&self) -> f64 {
        mean_or_zero(&self.alignment)
    }

    pub fn eigval_relerr_mean(&self) -> f64 {
        mean_or_zero(&self.eigval_relerr)
    }

    fn is_finite(&self) -> bool {
        let scalars = [
            self.val_w2,
            self.trace_ratio,
            self.adv,
            self.l1,
            self.sd,
            self.evec,
            self.eval,
            self.disc_wasserstein,
            self.disc_gp,
            self.beta_sd,
            self.sd_rho.unwrap_or(0.0),
        ];
        scalars
            .iter()
            .chain(&self.alignment)
            .chain(&self.eigval_relerr)
            .all(|v| v.is_finite())
    }
}

fn mean_or_zero(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged { epoch: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub rows: Vec<EpochRow>,
    pub status: RunStatus,
    pub config: ResolvedConfig,
    pub config_hash: String,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_w2: f64,
    /// Where the best checkpoint was written, if it was.
    pub checkpoint_path: Option<String>,
}

pub const RUN_CSV_HEADER: [&str; 15] = [
    "epoch",
    "val_w2",
    "val_w2_per_d",
    "trace_ratio",
    "alignment_mean",
    "eigval_relerr_mean",
    "adv",
    "l1",
    "sd",
    "evec",
    "eval",
    "disc_wasserstein",
    "disc_gp",
    "beta_sd",
    "sd_rho",
];

impl RunRecord {
    pub fn diverged(&self) -> bool {
        matches!(self.status, RunStatus::Diverged { .. })
    }

    pub fn best_row(&self) -> &EpochRow {
        &self.rows[self.best_epoch]
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(RUN_CSV_HEADER)?;
        for r in &self.rows {
            let mut fields = vec![r.epoch.to_string()];
            fields.extend(
                [
                    r.val_w2,
                    r.val_w2_per_d,
                    r.trace_ratio,
                    r.alignment_mean(),
                    r.eigval_relerr_mean(),
                    r.adv,
                    r.l1,
                    r.sd,
                    r.evec,
                    r.eval,
                    r.disc_wasserstein,
                    r.disc_gp,
                    r.beta_sd,
                ]
                .iter()
                .map(|v| positive_zero(*v).to_string()),
            );
            fields.push(r.sd_rho.map(|v| v.to_string()).unwrap_or_default());
            w.write_record(&fields)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub record: RunRecord,
    pub audit: ScheduleAudit,
    /// Networks from the epoch with the lowest validation W2.
    pub best: Checkpoint,
    pub last: Checkpoint,
}

/// Validation scoring shared by all epochs of a run.
struct Validator<'a> {
    cfg: &'a ResolvedConfig,
    posterior: PosteriorOperator,
    ys: Vec<DVector<f64>>,
    monitor: &'a [Pair],
}

struct ValidationResult {
    val_w2: f64,
    trace_ratio: f64,
    alignment: Vec<f64>,
    eigval_relerr: Vec<f64>,
}

impl<'a> Validator<'a> {
    fn new(cfg: &'a ResolvedConfig, data: &'a DatasetHandle) -> Result<Self> {
        let n = cfg.validation.num_measurements.min(data.val.len());
        let m = cfg.validation.sd_monitor_pairs.min(data.val.len());
        Ok(Self {
            cfg,
            posterior: PosteriorOperator::new(&data.prior, &data.mm)?,
            ys: data.val[..n].iter().map(|p| p.1.clone()).collect(),
            monitor: &data.val[..m],
        })
    }

    fn score(&self, gen: &AffineGenerator) -> Result<ValidationResult> {
        let s = summarize(
            gen,
            &self.posterior,
            &self.ys,
            self.cfg.k,
            self.cfg.validation_samples(),
            Streams::new(self.cfg.seed, Domain::Validation),
        )?;
        Ok(ValidationResult {
            val_w2: s.mean_w2,
            trace_ratio: s.trace_ratio,
            alignment: s.alignment,
            eigval_relerr: s.eigval_relerr,
        })
    }

    fn sd_stats(&self, gen: &AffineGenerator) -> SdStats {
        let p = self.cfg.sd_monitor_p;
        let (mut err, mut spread) = (0.0, 0.0);
        for (i, (x, y)) in self.monitor.iter().enumerate() {
            let mut rng = stream(self.cfg.seed, Domain::SdMonitor, i as u64);
            let codes: Vec<DVector<f64>> = (0..p).map(|_| normal_vector(&mut rng, self.cfg.code_dim)).collect();
            let samples = gen.forward_many(y, &codes);
            let avg = samples.iter().fold(DVector::zeros(self.cfg.dim), |a, s| a + s) / p as f64;
            err += (x - &avg).norm_squared();
            spread += samples.iter().map(|s| (s - &avg).norm_squared()).sum::<f64>() / p as f64;
        }
        let n = self.monitor.len().max(1) as f64;
        SdStats {
            p,
            err_sq_mean: err / n,
            spread_sq_mean: spread / n,
        }
    }
}

#[derive(Default)]
struct EpochAccumulator {
    steps: usize,
    adv: f64,
    l1: f64,
    sd: f64,
    evec: f64,
    eval: f64,
    disc_steps: usize,
    wass: f64,
    gp: f64,
}

/// Runs the training loop on `data.train`, scoring on `data.val` after
/// every epoch.
pub fn train(config: &TrainConfig, data: &DatasetHandle) -> Result<TrainOutcome> {
    let cfg = config.resolve(data.dim())?;
    data.mm.check_dim(cfg.dim)?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::invalid("training needs non-empty train and validation splits"));
    }
    let validator = Validator::new(&cfg, data)?;
    let mut state = TrainState::init(&cfg)?;
    let mut audit = ScheduleAudit::default();

    let initial = validator.score(&state.generator)?;
    let mut rows = vec![EpochRow {
        epoch: 0,
        val_w2: initial.val_w2,
        val_w2_per_d: initial.val_w2 / cfg.dim as f64,
        trace_ratio: initial.trace_ratio,
        alignment: initial.alignment,
        eigval_relerr: initial.eigval_relerr,
        adv: 0.0,
        l1: 0.0,
        sd: 0.0,
        evec: 0.0,
        eval: 0.0,
        disc_wasserstein: 0.0,
        disc_gp: 0.0,
        beta_sd: state.sd.beta_sd,
        sd_rho: None,
    }];
    let threshold = cfg.divergence.factor * initial.val_w2;
    let mut best = (0, initial.val_w2, state.checkpoint(&cfg));
    let mut bad_epochs = 0;
    let mut status = RunStatus::Completed;
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 0..cfg.epochs {
        state.epoch = epoch;
        order.sort_unstable();
        order.shuffle(&mut stream(cfg.seed, Domain::Shuffle, epoch as u64));
        let mut acc = EpochAccumulator::default();
        let beta_sd = state.sd.beta_sd;
        let mut failure = None;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Pair> = chunk.iter().map(|&i| &data.train[i]).collect();
            let result = (|| -> Result<()> {
                for _ in 0..cfg.n_disc {
                    let (w, g) = discriminator_step(&cfg, &mut state, &batch)?;
                    acc.disc_steps += 1;
                    acc.wass += w;
                    acc.gp += g;
                }
                let rep = generator_step(&cfg, &mut state, &batch, &mut audit)?;
                acc.steps += 1;
                acc.adv += rep.part("adv");
                acc.l1 += rep.part("l1");
                acc.sd += rep.part("sd");
                acc.evec += rep.part("evec");
                acc.eval += rep.part("eval");
                Ok(())
            })();
            if let Err(e) = result {
                failure = Some(e);
                break;
            }
        }
        if let Some(e) = failure {
            log::error!("epoch {epoch}: {e}");
            status = RunStatus::Diverged {
                epoch: epoch + 1,
                reason: e.to_string(),
            };
            break;
        }
        state.epoch = epoch + 1;
        let v = validator.score(&state.generator)?;
        let update = state.sd.update(&validator.sd_stats(&state.generator));
        state.sd = update.controller;
        let steps = acc.steps.max(1) as f64;
        let dsteps = acc.disc_steps.max(1) as f64;
        let row = EpochRow {
            epoch: epoch + 1,
            val_w2: v.val_w2,
            val_w2_per_d: v.val_w2 / cfg.dim as f64,
            trace_ratio: v.trace_ratio,
            alignment: v.alignment,
            eigval_relerr: v.eigval_relerr,
            adv: positive_zero(acc.adv / steps),
            l1: acc.l1 / steps,
            sd: positive_zero(acc.sd / steps),
            evec: positive_zero(acc.evec / steps),
            eval: positive_zero(acc.eval / steps),
            disc_wasserstein: positive_zero(acc.wass / dsteps),
            disc_gp: acc.gp / dsteps,
            beta_sd,
            sd_rho: update.rho,
        };
        log::info!(
            "epoch {:>3}: val W2 {:.5e}  trace ratio {:.4}  beta_sd {:.4e}",
            row.epoch,
            row.val_w2,
            row.trace_ratio,
            beta_sd
        );
        if !row.is_finite() {
            status = RunStatus::Diverged {
                epoch: epoch + 1,
                reason: "non-finite validation metrics".into(),
            };
            break;
        }
        rows.push(row);
        if v.val_w2 < best.1 {
            best = (epoch + 1, v.val_w2, state.checkpoint(&cfg));
        }
        if v.val_w2 > threshold {
            bad_epochs += 1;
            if bad_epochs >= cfg.divergence.patience {
                status = RunStatus::Diverged {
                    epoch: epoch + 1,
                    reason: Error::Diverged {
                        epoch: epoch + 1,
                        w2: v.val_w2,
                        threshold,
                    }
                    .to_string(),
                };
                break;
            }
        } else {
            bad_epochs = 0;
        }
    }

    let record = RunRecord {
        rows,
        status,
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
        best_epoch: best.0,
        best_val_w2: best.1,
        checkpoint_path: None,
        config: cfg.clone(),
    };
    Ok(TrainOutcome {
        record,
        audit,
        best: best.2,
        last: state.checkpoint(&cfg),
    })
}
