//! Experiment configs, profiles and the sweep runner behind the CLI.
//!
//! A config file is JSON with three sections, each optional:
//!
//! ```json
//! { "data": { "dim": 10 }, "train": { "lazy_period": 100 }, "eval": {} }
//! ```
//!
//! Unknown keys are rejected. Values are layered as built-in defaults, then
//! the profile, then the file, then `--set` overrides (`train.k=5`).
//!
//! `results.csv` has one row per `(axis value, mode, seed)` and the columns
//! listed in [`RESULTS_HEADER`]. `mean_w2`, `w2_per_d` and `trace_ratio` come
//! from the test split scored with the best-validation checkpoint; `val_w2`
//! and `val_w2_per_d` are that checkpoint's validation scores.

use crate::datakit::{generate_dataset, DatasetHandle, SplitCounts};
use crate::error::{Error, Result};
use crate::evaluation::{summarize, Streams};
use crate::gaussian_world::{make_prior_chain, GaussianPrior, MaskConvention, MeasurementModel, PosteriorOperator};
use crate::rng::{Domain, RNG_ALGORITHM};
use crate::trainer::{train, Mode, RunStatus, TrainConfig, TrainOutcome};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub dim: usize,
    pub counts: SplitCounts,
    pub noise_var: f64,
    pub mask: MaskConvention,
    /// Seed of the prior chain.
    pub prior_seed: u64,
    /// Largest dimension of the prior chain; smaller priors are truncations.
    pub chain_max_dim: usize,
    /// Dataset seed; `None` uses the run seed.
    pub seed: Option<u64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dim: 10,
            counts: SplitCounts {
                train: 70_000,
                val: 20_000,
                test: 10_000,
            },
            noise_var: 1e-3,
            mask: MaskConvention::ZeroBasedEven,
            prior_seed: 0,
            chain_max_dim: 100,
            seed: None,
        }
    }
}

impl DataConfig {
    pub fn prior(&self, dim: usize) -> Result<GaussianPrior> {
        if dim > self.chain_max_dim {
            return Err(Error::invalid(format!(
                "d = {dim} exceeds the prior chain's largest dimension {}",
                self.chain_max_dim
            )));
        }
        make_prior_chain(self.chain_max_dim, self.prior_seed)?
            .into_iter()
            .find(|(d, _)| *d == dim)
            .map(|(_, p)| p)
            .ok_or_else(|| Error::invalid(format!("the prior chain has dimensions 10, 20, ...; got d = {dim}")))
    }

    pub fn measurement(&self, dim: usize) -> Result<MeasurementModel> {
        MeasurementModel::masked_even(dim, self.noise_var, self.mask)
    }

    pub fn dataset(&self, dim: usize, run_seed: u64) -> Result<DatasetHandle> {
        let prior = self.prior(dim)?;
        let mm = self.measurement(dim)?;
        generate_dataset(&prior, &mm, self.counts, self.seed.unwrap_or(run_seed))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Test pairs scored; `None` uses the whole test split.
    pub test_pairs: Option<usize>,
    pub samples_per_dim: usize,
    pub rem_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            test_pairs: None,
            samples_per_dim: 10,
            rem_samples: 100,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Modes run at each sweep point; `None` means both for a `d` sweep and
    /// pcaGAN alone for `M` and `K`.
    pub modes: Option<Vec<Mode>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Laptop-sized: d in {10, 20, 40}, 40 epochs, 10k/2k/1k pairs.
    Desk,
    /// The published setup: d up to 100, 100 epochs, 70k/20k/10k pairs.
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::invalid(format!(
                "unknown profile {other:?} (expected desk or paper)"
            ))),
        }
    }
}

impl Profile {
    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        }
    }

    /// The base config for this profile, as a JSON tree ready for layering.
    pub fn base(self) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        match self {
            Profile::Desk => {
                cfg.data.dim = 40;
                cfg.data.counts = SplitCounts {
                    train: 10_000,
                    val: 2_000,
                    test: 1_000,
                };
                cfg.train.epochs = 40;
                cfg.train.lazy_period = DESK_LAZY_PERIOD;
                cfg.train.e_evec = DESK_E_EVEC;
                cfg.train.e_eval = Some(DESK_E_EVAL);
            }
            Profile::Paper => {
                cfg.data.dim = 100;
            }
        }
        cfg
    }

    pub fn default_values(self, axis: SweepAxis) -> Vec<u64> {
        match (self, axis) {
            (Profile::Desk, SweepAxis::D) => vec![10, 20, 40],
            (Profile::Paper, SweepAxis::D) => (1..=10).map(|k| 10 * k).collect(),
            (Profile::Desk, SweepAxis::K) => vec![10, 20, 40],
            (Profile::Paper, SweepAxis::K) => vec![25, 50, 100],
            (Profile::Desk, SweepAxis::M) => vec![1, 10, 100],
            (Profile::Paper, SweepAxis::M) => vec![1, 10, 100, 1000],
        }
    }
}

/// Lazy period of the desk profile. A desk epoch has about 157 generator
/// steps against about 1094 in the `paper` profile.
///
/// The activation epochs scale the `paper` profile's 10 and 35 (of 100) to a
/// 40 epoch run. Starting the eigenvalue term before the conditional mean settles
/// inflates the spread, because its targets include the squared mean error.
pub const DESK_LAZY_PERIOD: u64 = 5;
pub const DESK_E_EVEC: usize = 4;
pub const DESK_E_EVAL: usize = 14;

/// Parses a dotted override `a.b.c=value`. The value is read as JSON when it
/// parses, otherwise as a string.
pub fn parse_override(text: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::invalid(format!("override {text:?} is not of the form key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::invalid(format!("override key {key:?} has an empty component")));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    Ok((path, value))
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

fn set_path(root: &mut Value, path: &[String], value: Value) -> Result<()> {
    let mut node = root;
    for (i, key) in path.iter().enumerate() {
        let Value::Object(map) = node else {
            return Err(Error::invalid(format!(
                "override key {} descends into a non-object",
                path.join(".")
            )));
        };
        if i + 1 == path.len() {
            map.insert(key.clone(), value);
            return Ok(());
        }
        node = map
            .entry(key.clone())
            .or_insert_with(|| Value::Object(Default::default()));
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
    }
    Ok(())
}

/// Layers a profile, an optional config file body and overrides.
pub fn build_config(profile: Profile, file: Option<&str>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut tree = serde_json::to_value(profile.base())?;
    if let Some(text) = file {
        let patch: Value =
            serde_json::from_str(text).map_err(|e| Error::invalid(format!("config file is not valid JSON: {e}")))?;
        if !patch.is_object() {
            return Err(Error::invalid("config file must hold a JSON object"));
        }
        merge(&mut tree, &patch);
    }
    for o in overrides {
        let (path, value) = parse_override(o)?;
        set_path(&mut tree, &path, value)?;
    }
    serde_json::from_value(tree).map_err(|e| Error::invalid(format!("config: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "M")]
    M,
    #[serde(rename = "K")]
    K,
    #[serde(rename = "d")]
    D,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::M => "M",
            SweepAxis::K => "K",
            SweepAxis::D => "d",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "M" | "m" => Ok(SweepAxis::M),
            "K" | "k" => Ok(SweepAxis::K),
            "d" | "D" => Ok(SweepAxis::D),
            other => Err(Error::invalid(format!(
                "unknown sweep axis {other:?} (expected M, K or d)"
            ))),
        }
    }
}

/// One training run of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis_value: u64,
    pub mode: Mode,
    pub seed: u64,
}

impl SweepPoint {
    fn key(&self) -> (u64, &'static str, u64) {
        (self.axis_value, self.mode.as_str(), self.seed)
    }

    fn dir_name(&self, axis: SweepAxis) -> String {
        format!(
            "{}{}-{}-seed{}",
            axis.as_str(),
            self.axis_value,
            self.mode.as_str(),
            self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<u64>,
    pub seeds: Vec<u64>,
    pub config: ExperimentConfig,
}

impl SweepSpec {
    pub fn modes(&self) -> Vec<Mode> {
        match (&self.config.modes, self.axis) {
            (Some(m), _) => m.clone(),
            (None, SweepAxis::D) => vec![Mode::PcaGan, Mode::RcGan],
            (None, _) => vec![Mode::PcaGan],
        }
    }

    /// Points in the order they appear in `results.csv`.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &axis_value in &self.values {
            for mode in self.modes() {
                for &seed in &self.seeds {
                    out.push(SweepPoint { axis_value, mode, seed });
                }
            }
        }
        out
    }

    /// Dimension and training config for one point.
    pub fn point_config(&self, point: &SweepPoint) -> Result<(usize, TrainConfig)> {
        let mut train = self.config.train.clone();
        train.mode = point.mode;
        train.seed = point.seed;
        let mut dim = self.config.data.dim;
        match self.axis {
            SweepAxis::D => dim = point.axis_value as usize,
            SweepAxis::K => train.k = Some(point.axis_value as usize),
            SweepAxis::M => train.lazy_period = point.axis_value,
        }
        if self.axis == SweepAxis::D && train.k.is_some_and(|k| k > dim) {
            return Err(Error::invalid(format!("K = {:?} exceeds d = {dim}", train.k)));
        }
        train.resolve(dim)?;
        Ok((dim, train))
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.seeds.is_empty() {
            return Err(Error::invalid("a sweep needs at least one value and one seed"));
        }
        let unique: BTreeSet<_> = self.values.iter().collect();
        if unique.len() != self.values.len() {
            return Err(Error::invalid("sweep values must be distinct"));
        }
        for p in self.points() {
            self.point_config(&p)?;
            if self.axis == SweepAxis::D {
                self.config.data.prior(p.axis_value as usize)?;
            }
        }
        self.config.data.prior(self.config.data.dim).map(|_| ())
    }

    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(
            serde_json::to_vec(&self.config).expect("configs serialize"),
        ))
    }
}

pub const RESULTS_HEADER: [&str; 13] = [
    "axis",
    "axis_value",
    "mode",
    "seed",
    "status",
    "best_epoch",
    "val_w2",
    "val_w2_per_d",
    "mean_w2",
    "w2_per_d",
    "trace_ratio",
    "config_hash",
    "wall_seconds",
];

/// One line of `results.csv`, kept as the exact strings written.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub fields: Vec<String>,
}

impl ResultRow {
    pub fn get(&self, column: &str) -> &str {
        let i = RESULTS_HEADER.iter().position(|c| *c == column).expect("known column");
        &self.fields[i]
    }

    pub fn number(&self, column: &str) -> f64 {
        self.get(column).parse().unwrap_or(f64::NAN)
    }

    pub fn point(&self) -> Option<SweepPoint> {
        Some(SweepPoint {
            axis_value: self.get("axis_value").parse().ok()?,
            mode: self.get("mode").parse().ok()?,
            seed: self.get("seed").parse().ok()?,
        })
    }
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != RESULTS_HEADER {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            detail: format!("unexpected results header {header:?}"),
        });
    }
    r.records()
        .map(|rec| {
            Ok(ResultRow {
                fields: rec?.iter().map(str::to_string).collect(),
            })
        })
        .collect()
}

fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::Writer::from_path(&tmp)?;
        w.write_record(RESULTS_HEADER)?;
        for r in rows {
            w.write_record(&r.fields)?;
        }
        w.flush()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}

fn num(v: f64) -> String {
    (v + 0.0).to_string()
}

/// Test-split scores of a trained generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestScore {
    pub mean_w2: f64,
    pub trace_ratio: f64,
}

pub fn score_test(outcome: &TrainOutcome, data: &DatasetHandle, eval: &EvalConfig, seed: u64) -> Result<TestScore> {
    let posterior = PosteriorOperator::new(&data.prior, &data.mm)?;
    let n = eval.test_pairs.unwrap_or(data.test.len()).min(data.test.len());
    let ys: Vec<_> = data.test[..n].iter().map(|p| p.1.clone()).collect();
    let generator = outcome.best.generator()?;
    let s = summarize(
        &generator,
        &posterior,
        &ys,
        outcome.record.config.k,
        eval.samples_per_dim * data.dim(),
        Streams::new(seed, Domain::Evaluation),
    )?;
    Ok(TestScore {
        mean_w2: s.mean_w2,
        trace_ratio: s.trace_ratio,
    })
}

/// Trains and scores one point, writing its artifacts under `run_dir`.
pub fn run_point(spec: &SweepSpec, point: &SweepPoint, run_dir: &Path) -> Result<(ResultRow, bool)> {
    let start = Instant::now();
    let (dim, train_cfg) = spec.point_config(point)?;
    let data = spec.config.data.dataset(dim, point.seed)?;
    let mut outcome = train(&train_cfg, &data)?;
    std::fs::create_dir_all(run_dir)?;
    let ckpt = run_dir.join("best.ckpt.json");
    outcome.best.save(&ckpt)?;
    outcome.record.checkpoint_path = Some(ckpt.display().to_string());
    outcome.record.write_csv(&run_dir.join("record.csv"))?;
    outcome.record.write_json(&run_dir.join("record.json"))?;
    let test = score_test(&outcome, &data, &spec.config.eval, point.seed)?;
    let rec = &outcome.record;
    let diverged = rec.diverged();
    let status = match &rec.status {
        RunStatus::Completed => "completed",
        RunStatus::Diverged { .. } => "diverged",
    };
    let best = rec.best_row();
    let fields = vec![
        spec.axis.as_str().to_string(),
        point.axis_value.to_string(),
        point.mode.as_str().to_string(),
        point.seed.to_string(),
        status.to_string(),
        rec.best_epoch.to_string(),
        num(best.val_w2),
        num(best.val_w2_per_d),
        num(test.mean_w2),
        num(test.mean_w2 / dim as f64),
        num(test.trace_ratio),
        rec.config_hash.clone(),
        format!("{:.3}", start.elapsed().as_secs_f64()),
    ];
    Ok((ResultRow { fields }, diverged))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    crate_version: String,
    rng: String,
    profile: Option<Profile>,
    axis: SweepAxis,
    values: Vec<u64>,
    seeds: Vec<u64>,
    modes: Vec<Mode>,
    config: ExperimentConfig,
    config_hash: String,
    results: String,
    runs: Vec<ManifestRun>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestRun {
    axis_value: u64,
    mode: Mode,
    seed: u64,
    run_dir: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub rows: Vec<ResultRow>,
    /// Points run in this invocation (excludes rows kept by `resume`).
    pub ran: usize,
    pub diverged: usize,
    pub results_path: PathBuf,
}

/// Runs every point of `spec` with `jobs` workers and writes `results.csv`
/// and `manifest.json` into `out`. With `resume`, points already present in
/// an existing `results.csv` are kept and not rerun.
pub fn run_sweep(
    spec: &SweepSpec,
    profile: Option<Profile>,
    out: &Path,
    jobs: usize,
    resume: bool,
) -> Result<SweepSummary> {
    spec.validate()?;
    std::fs::create_dir_all(out)?;
    let results_path = out.join("results.csv");
    let points = spec.points();
    let mut done: Vec<(SweepPoint, ResultRow)> = Vec::new();
    if resume && results_path.exists() {
        for row in read_results(&results_path)? {
            match row.point() {
                Some(p) if row.get("axis") == spec.axis.as_str() && points.contains(&p) => {
                    if !done.iter().any(|(q, _)| q.key() == p.key()) {
                        done.push((p, row));
                    }
                }
                _ => log::warn!("resume: dropping a results row that is not part of this sweep"),
            }
        }
    }
    let todo: Vec<SweepPoint> = points
        .iter()
        .filter(|p| !done.iter().any(|(q, _)| q == *p))
        .copied()
        .collect();
    let manifest = Manifest {
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        rng: RNG_ALGORITHM.to_string(),
        profile,
        axis: spec.axis,
        values: spec.values.clone(),
        seeds: spec.seeds.clone(),
        modes: spec.modes(),
        config: spec.config.clone(),
        config_hash: spec.config_hash(),
        results: "results.csv".into(),
        runs: points
            .iter()
            .map(|p| ManifestRun {
                axis_value: p.axis_value,
                mode: p.mode,
                seed: p.seed,
                run_dir: format!("runs/{}", p.dir_name(spec.axis)),
            })
            .collect(),
    };
    std::fs::write(out.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;

    let order = |p: &SweepPoint| points.iter().position(|q| q == p).expect("point belongs to the sweep");
    let shared = Mutex::new(done);
    let next = AtomicUsize::new(0);
    let first_error: Mutex<Option<Error>> = Mutex::new(None);
    let diverged = AtomicUsize::new(0);
    let flush = |rows: &mut Vec<(SweepPoint, ResultRow)>| -> Result<()> {
        rows.sort_by_key(|(p, _)| order(p));
        let only: Vec<ResultRow> = rows.iter().map(|(_, r)| r.clone()).collect();
        write_results(&results_path, &only)
    };
    flush(&mut shared.lock().expect("results lock"))?;
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(todo.len().max(1)) {
            scope.spawn(|| loop {
                if first_error.lock().expect("error lock").is_some() {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(point) = todo.get(i) else { break };
                log::info!(
                    "running {} = {} {} seed {}",
                    spec.axis.as_str(),
                    point.axis_value,
                    point.mode.as_str(),
                    point.seed
                );
                let run_dir = out.join("runs").join(point.dir_name(spec.axis));
                let result = run_point(spec, point, &run_dir).and_then(|(row, div)| {
                    if div {
                        diverged.fetch_add(1, Ordering::SeqCst);
                    }
                    let mut rows = shared.lock().expect("results lock");
                    rows.push((*point, row));
                    flush(&mut rows)
                });
                if let Err(e) = result {
                    first_error.lock().expect("error lock").get_or_insert(e);
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().expect("error lock") {
        return Err(e);
    }
    let rows = shared
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|(_, r)| r)
        .collect();
    Ok(SweepSummary {
        rows,
        ran: todo.len(),
        diverged: diverged.into_inner(),
        results_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layering_and_overrides() {
        let cfg = build_config(
            Profile::Desk,
            Some(r#"{"train": {"beta_pca": 0.5}, "data": {"dim": 20}}"#),
            &[
                "train.k=5".into(),
                "train.sd.gain=0.25".into(),
                "data.counts.train=300".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.beta_pca, 0.5);
        assert_eq!(cfg.train.k, Some(5));
        assert_eq!(cfg.train.sd.gain, 0.25);
        assert_eq!(cfg.data.dim, 20);
        assert_eq!(cfg.data.counts.train, 300);
        assert_eq!(cfg.train.epochs, 40);
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let err = build_config(Profile::Desk, None, &["train.lazy=3".into()]).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
        assert!(build_config(Profile::Desk, None, &["novalue".into()]).is_err());
        assert!(build_config(Profile::Desk, Some("[1]"), &[]).is_err());
    }

    #[test]
    fn row_accounting() {
        let spec = SweepSpec {
            axis: SweepAxis::D,
            values: vec![10, 20],
            seeds: vec![1, 2, 3],
            config: Profile::Desk.base(),
        };
        assert_eq!(spec.points().len(), 12);
        let k_spec = SweepSpec {
            axis: SweepAxis::K,
            ..spec
        };
        assert_eq!(k_spec.points().len(), 6);
    }
}
